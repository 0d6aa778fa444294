"""Finite atomic measures on R^d and the cemetery-padded Wasserstein distance.

An :class:`AtomicMeasure` is a finite sum of unit point masses, stored as
distinct positions with integer multiplicities. Positions are merged only
when they are exactly equal.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Sum of point masses ``sum_k multiplicities[k] * delta_{positions[k]}``.

    Use :meth:`from_atoms` or :func:`embed` rather than the raw constructor;
    they merge duplicate positions and put atoms in canonical order.
    """

    positions: np.ndarray  # (m, d) float64, distinct rows, lexicographic order
    multiplicities: np.ndarray  # (m,) int64, strictly positive
    dimension: int

    @classmethod
    def zero(cls, dimension: int) -> "AtomicMeasure":
        return cls(np.zeros((0, dimension)), np.zeros(0, dtype=np.int64), dimension)

    @classmethod
    def from_atoms(
        cls,
        positions: Sequence[Sequence[float]] | np.ndarray,
        multiplicities: Sequence[int] | np.ndarray | None = None,
        dimension: int | None = None,
    ) -> "AtomicMeasure":
        pos = _as_points(positions, dimension)
        d = pos.shape[1]
        if multiplicities is None:
            mult = np.ones(len(pos), dtype=np.int64)
        else:
            mult = np.asarray(multiplicities, dtype=np.int64).reshape(-1)
            if len(mult) != len(pos):
                raise ValueError("positions and multiplicities differ in length")
            if np.any(mult <= 0):
                raise ValueError("multiplicities must be strictly positive")
        if len(pos) == 0:
            return cls.zero(d)
        if not np.all(np.isfinite(pos)):
            raise ValueError("atom positions must be finite")
        uniq, inverse = np.unique(pos, axis=0, return_inverse=True)
        merged = np.bincount(inverse.reshape(-1), weights=mult, minlength=len(uniq))
        uniq.setflags(write=False)
        merged = merged.astype(np.int64)
        merged.setflags(write=False)
        return cls(uniq, merged, d)

    @property
    def mass(self) -> int:
        return int(self.multiplicities.sum())

    @property
    def n_atoms(self) -> int:
        return len(self.multiplicities)

    def unit_atoms(self) -> np.ndarray:
        """Positions with every atom repeated by its multiplicity, shape (mass, d)."""
        return np.repeat(self.positions, self.multiplicities, axis=0)

    def __add__(self, other: "AtomicMeasure") -> "AtomicMeasure":
        if other.dimension != self.dimension:
            raise DimensionMismatch(f"cannot add measures on R^{self.dimension} and R^{other.dimension}")
        return AtomicMeasure.from_atoms(
            np.vstack([self.positions, other.positions]),
            np.concatenate([self.multiplicities, other.multiplicities]),
            dimension=self.dimension,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AtomicMeasure):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.multiplicities, other.multiplicities)
        )

    def __repr__(self) -> str:
        atoms = ", ".join(
            f"{m}*d{tuple(float(v) for v in x)}" for x, m in zip(self.positions, self.multiplicities)
        )
        return f"AtomicMeasure([{atoms}], d={self.dimension})"

    def to_json(self) -> list[dict]:
        return [
            {"position": [float(v) for v in x], "multiplicity": int(m)}
            for x, m in zip(self.positions, self.multiplicities)
        ]

    @classmethod
    def from_json(cls, data: Iterable[dict], dimension: int | None = None) -> "AtomicMeasure":
        data = list(data)
        if not data:
            if dimension is None:
                raise ValueError("dimension is required for an empty atom list")
            return cls.zero(dimension)
        positions = [atom["position"] for atom in data]
        mult = [int(atom.get("multiplicity", 1)) for atom in data]
        return cls.from_atoms(positions, mult, dimension)


def _as_points(positions, dimension: int | None) -> np.ndarray:
    if isinstance(positions, np.ndarray):
        pos = np.asarray(positions, dtype=float)
        if pos.ndim == 1:
            pos = pos.reshape(-1, 1) if dimension in (None, 1) else pos.reshape(1, -1)
    else:
        rows = [np.atleast_1d(np.asarray(p, dtype=float)) for p in positions]
        dims = {len(r) for r in rows}
        if len(dims) > 1:
            raise DimensionMismatch(f"positions have mixed dimensions {sorted(dims)}")
        if not rows:
            return np.zeros((0, dimension or 1))
        pos = np.vstack(rows)
    if pos.ndim != 2:
        raise DimensionMismatch("positions must form an (m, d) array")
    if dimension is not None and pos.shape[1] != dimension and len(pos):
        raise DimensionMismatch(f"expected dimension {dimension}, got {pos.shape[1]}")
    if len(pos) == 0 and dimension is not None:
        return np.zeros((0, dimension))
    return pos


def embed(positions: Sequence[Sequence[float]] | np.ndarray, dimension: int | None = None) -> AtomicMeasure:
    """Map a vector of particle positions to the sum of unit masses at them."""
    return AtomicMeasure.from_atoms(positions, dimension=dimension)


def integrate(lam: AtomicMeasure, phi: Callable[[np.ndarray], float]) -> float:
    """Return <phi, lam>; ``phi`` is called on one position (a length-d array) at a time."""
    total = 0.0
    for x, m in zip(lam.positions, lam.multiplicities):
        total += int(m) * float(phi(x))
    return total


@dataclass(frozen=True)
class PaddedMeasure:
    """A measure topped up with ``cemetery_mass`` unit atoms at the cemetery point.

    The cemetery sits at distance ``|x - anchor| + 1`` from every x.
    """

    base: AtomicMeasure
    cemetery_mass: int
    anchor: np.ndarray

    def __post_init__(self):
        if self.cemetery_mass < 0:
            raise ValueError("cemetery mass must be non-negative")

    @classmethod
    def pad(cls, lam: AtomicMeasure, m: int, anchor=None) -> "PaddedMeasure":
        if m < lam.mass:
            raise ValueError(f"padded mass {m} is below the measure's mass {lam.mass}")
        x0 = np.zeros(lam.dimension) if anchor is None else np.asarray(anchor, dtype=float).reshape(-1)
        return cls(lam, m - lam.mass, x0)

    @property
    def total_mass(self) -> int:
        return self.base.mass + self.cemetery_mass

    def cemetery_distance(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.linalg.norm(x - self.anchor, axis=1) + 1.0


def transport_cost_matrix(
    lam: AtomicMeasure, other: AtomicMeasure, p: float = 1, anchor=None, m: int | None = None
) -> np.ndarray:
    """Square cost matrix between the unit atoms of both measures padded to mass ``m``."""
    if lam.dimension != other.dimension:
        raise DimensionMismatch(f"measures live on R^{lam.dimension} and R^{other.dimension}")
    m = max(lam.mass, other.mass) if m is None else m
    left = PaddedMeasure.pad(lam, m, anchor)
    right = PaddedMeasure.pad(other, m, anchor)
    xs, ys = lam.unit_atoms(), other.unit_atoms()
    cost = np.zeros((m, m))
    nx, ny = len(xs), len(ys)
    if nx and ny:
        cost[:nx, :ny] = np.linalg.norm(xs[:, None, :] - ys[None, :, :], axis=2) ** p
    if nx:
        cost[:nx, ny:] = (left.cemetery_distance(xs) ** p)[:, None]
    if ny:
        cost[nx:, :ny] = (right.cemetery_distance(ys) ** p)[None, :]
    return cost


def wasserstein(lam: AtomicMeasure, other: AtomicMeasure, p: float = 1, anchor=None, m: int | None = None) -> float:
    """Cemetery-padded Wasserstein distance of order ``p`` between two atomic measures.

    Both measures are padded to a common integer mass (default: the larger of
    the two) and the optimal unit-atom assignment is solved exactly.
    """
    if p not in (1, 2):
        raise ValueError("only p in {1, 2} is supported")
    cost = transport_cost_matrix(lam, other, p, anchor, m)
    if cost.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum()) ** (1.0 / p)
