"""Kinetic-energy scenario in one dimension: the HJB equation for ``h`` and its feedback.

The value ansatz ``w_t(lam) = int h(t, x) lam(dx)`` is exact when

    h_t + b h_x - (h_x)^2 / 2 + h_xx / 2 + phi h = 0,   h(T, .) = G,

with ``phi = gamma (sum_k k p_k - 1)``; the optimal action is ``-h_x``.
The solver steps backward in time, treating diffusion implicitly and the
remaining terms explicitly, on a uniform grid with reflecting (zero-flux)
boundaries.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from branchlab import streams
from branchlab.estimate import ValueField
from branchlab.measure import AtomicMeasure
from branchlab.policy import Feedback
from branchlab.scenario import KineticParts, Scenario


class KineticSolverError(ArithmeticError):
    pass


class CFLViolation(KineticSolverError):
    pass


@dataclass(frozen=True)
class KineticGrid:
    horizon: float = 1.0
    x_min: float = -8.0
    x_max: float = 8.0
    n_x: int = 801
    n_t: int = 1000
    substeps: int = 16  # solver steps between stored time slices

    def __post_init__(self):
        if self.n_x < 3 or self.n_t < 1 or self.substeps < 1:
            raise ValueError("need at least 3 space nodes and one time step")
        if not self.x_max > self.x_min:
            raise ValueError("empty space interval")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_t + 1)

    @property
    def dt(self) -> float:
        return self.horizon / (self.n_t * self.substeps)

    def to_json(self) -> dict:
        return {
            "horizon": self.horizon,
            "x_min": self.x_min,
            "x_max": self.x_max,
            "n_x": self.n_x,
            "n_t": self.n_t,
            "substeps": self.substeps,
        }


@dataclass(frozen=True)
class KineticSolution:
    grid: KineticGrid
    h: np.ndarray  # (n_t + 1, n_x)
    Dh: np.ndarray
    boundary: str = "neumann"

    def _locate(self, t, x):
        g = self.grid
        t = np.clip(np.asarray(t, dtype=float), 0.0, g.horizon)
        x = np.clip(np.asarray(x, dtype=float), g.x_min, g.x_max)
        st = t / g.horizon * g.n_t
        it = np.minimum(st.astype(np.int64), g.n_t - 1)
        sx = (x - g.x_min) / (g.x_max - g.x_min) * (g.n_x - 1)
        ix = np.minimum(sx.astype(np.int64), g.n_x - 2)
        return it, st - it, ix, sx - ix

    def _bilinear(self, field, t, x):
        it, wt, ix, wx = self._locate(t, x)
        lo = (1 - wx) * field[it, ix] + wx * field[it, ix + 1]
        hi = (1 - wx) * field[it + 1, ix] + wx * field[it + 1, ix + 1]
        return (1 - wt) * lo + wt * hi

    def value(self, t, x) -> np.ndarray:
        """``h(t, x)``, bilinear in (t, x), clamped to the grid."""
        return self._bilinear(self.h, t, x)

    def gradient(self, t, x) -> np.ndarray:
        return self._bilinear(self.Dh, t, x)

    def to_csv(self, stride: int = 1) -> str:
        """Rows ``t, x, h, Dh`` for every ``stride``-th stored time slice."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "h", "Dh"])
        xs = self.grid.x
        for k in range(0, len(self.grid.t), max(1, stride)):
            t = self.grid.t[k]
            for j, x in enumerate(xs):
                w.writerow([f"{t:.17g}", f"{x:.17g}", f"{self.h[k, j]:.17g}", f"{self.Dh[k, j]:.17g}"])
        return buf.getvalue()


def central_gradient(h: np.ndarray, dx: float) -> np.ndarray:
    """Central differences inside, zero at the reflecting ends."""
    g = np.zeros_like(h)
    g[1:-1] = (h[2:] - h[:-2]) / (2 * dx)
    return g


def _laplacian_bands(n: int, dx: float, theta: float) -> np.ndarray:
    """Banded form of ``I - theta * Lap`` with mirror ghost nodes at both ends."""
    r = theta / (dx * dx)
    ab = np.zeros((3, n))
    ab[1, :] = 1 + 2 * r
    ab[0, 1:] = -r
    ab[2, :-1] = -r
    ab[0, 1] = -2 * r  # row 0: ghost h_{-1} = h_1
    ab[2, n - 2] = -2 * r  # row n-1: ghost h_n = h_{n-2}
    return ab


def solve_kinetic_hjb(
    scn: Scenario | KineticParts,
    grid: KineticGrid,
    G: Callable[[np.ndarray], np.ndarray] | None = None,
) -> KineticSolution:
    """Backward semi-implicit time stepping from ``h(T) = G``.

    ``G`` defaults to the scenario's terminal function. Raises
    :class:`CFLViolation` when ``dt * max|b - Dh| / dx`` exceeds one at any
    step and :class:`KineticSolverError` on non-finite values.
    """
    parts = scn.details["kinetic"] if isinstance(scn, Scenario) else scn
    if parts.dim != 1:
        raise ValueError("the grid solver handles one space dimension only")
    G = parts.terminal if G is None else G
    xs = grid.x
    ts = grid.t
    dx = xs[1] - xs[0]
    dt = grid.dt
    X = xs[:, None]
    ab = _laplacian_bands(grid.n_x, dx, 0.5 * dt)

    H = np.empty((grid.n_t + 1, grid.n_x))
    D = np.empty_like(H)
    h = np.asarray(G(X), dtype=float).reshape(grid.n_x)
    if not np.all(np.isfinite(h)):
        raise KineticSolverError("terminal function is not finite on the grid")
    H[-1] = h
    D[-1] = central_gradient(h, dx)
    dh = D[-1]
    for n in range(grid.n_t, 0, -1):
        for j in range(grid.substeps):
            s = ts[n] - j * dt
            t = np.full(grid.n_x, s)
            b = np.asarray(parts.drift(t, X), dtype=float).reshape(grid.n_x)
            phi = np.asarray(parts.potential(t, X), dtype=float).reshape(grid.n_x)
            speed = float(np.max(np.abs(b - dh)))
            if speed * dt / dx > 1.0:
                raise CFLViolation(f"CFL number {speed * dt / dx:.3g} > 1 at t={s:.6g}; refine the time grid")
            rhs = h + dt * (b * dh - 0.5 * dh * dh + phi * h)
            h = solve_banded((1, 1), ab, rhs)
            if not np.all(np.isfinite(h)):
                raise KineticSolverError(f"solution diverged at t={s - dt:.6g}")
            dh = central_gradient(h, dx)
        H[n - 1] = h
        D[n - 1] = dh
    return KineticSolution(grid, H, D)


def kinetic_feedback(sol: KineticSolution) -> Feedback:
    """The action ``-Dh(t, x)``, interpolated and clamped to the grid."""

    def rule(t, x, lam):
        return -sol.gradient(t, x[:, 0])[:, None]

    return Feedback(rule, "kinetic-optimal")


def kinetic_value_field(sol: KineticSolution) -> ValueField:
    def at(t, lam: AtomicMeasure) -> float:
        if lam.mass == 0:
            return 0.0
        x = lam.unit_atoms()[:, 0]
        return float(np.sum(sol.value(np.full(len(x), t), x)))

    def groups(t, positions, grp, n_groups):
        if len(positions) == 0:
            return np.zeros(n_groups)
        v = sol.value(np.full(len(positions), t), positions[:, 0])
        return np.bincount(grp, weights=v, minlength=n_groups)

    return ValueField("kinetic", at, groups)


def quadratic_closed_form(tau, x) -> np.ndarray:
    """``h`` for ``G(x) = x^2`` with no drift and no branching, ``tau = T - t``."""
    tau = np.asarray(tau, dtype=float)
    x = np.asarray(x, dtype=float)
    return x * x / (1 + 2 * tau) + 0.5 * np.log1p(2 * tau)


def hopf_cole_oracle(G: Callable[[np.ndarray], np.ndarray], tau: float, x, samples: int = 100_000, seed: int = 0):
    """``-ln E exp(-G(x + sqrt(tau) Z))`` by Monte Carlo; returns ``(value, standard_error)``.

    ``G`` maps points ``(n, d)`` to ``(n,)``. The standard error comes from
    the delta method applied to the logarithm.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = len(x)
    key = streams.stream_key(np.uint64(seed % (1 << 64)), np.uint64(0), "brownian")
    z = streams.normal(key, np.arange(samples * d, dtype=np.uint64)).reshape(samples, d)
    g = np.asarray(G(x[None, :] + math.sqrt(tau) * z), dtype=float).reshape(samples)
    shift = float(g.min())
    e = np.exp(-(g - shift))
    m = 1.0 + math.fsum(e - 1.0) / samples
    if samples > 1:
        sd = math.sqrt(math.fsum((e - m) ** 2) / (samples - 1))
    else:
        sd = 0.0
    return shift - math.log(m), sd / math.sqrt(samples) / m
