"""Coefficient bundles for controlled branching diffusions.

All particle-level evaluators are vectorised over particles and share one
signature ``f(t, x, lam, a)`` where

* ``t`` is an ``(n,)`` array of times (replications in a batch may sit at
  different times),
* ``x`` is ``(n, d)``, ``a`` is ``(n, q)``,
* ``lam`` is a :class:`MeasureView` giving each particle access to the
  empirical measure of its own population.

Shapes returned: drift ``(n, d)``, volatility ``(n, d, d')``, branching
rate ``(n,)``, offspring law ``(n, K)``, running cost ``(n,)``. The terminal
cost acts on a whole :class:`~branchlab.measure.AtomicMeasure`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from branchlab.measure import AtomicMeasure

PROB_TOL = 1e-12


class InvalidScenario(ValueError):
    pass


class MarkOutOfRange(ValueError):
    pass


# --------------------------------------------------------------------------
# measures seen from particles


class MeasureView:
    """Empirical measures of ``n_groups`` populations, queried per particle.

    ``positions``/``groups`` list every particle and the population it
    belongs to; ``query_groups[i]`` says which population the i-th query
    point looks at. In the simulator the query points are the particles
    themselves.
    """

    def __init__(self, positions: np.ndarray, groups: np.ndarray, n_groups: int, query_groups=None):
        self.positions = positions
        self.groups = groups
        self.n_groups = n_groups
        self.query_groups = groups if query_groups is None else query_groups
        self._counts = None

    @classmethod
    def of_measure(cls, lam: AtomicMeasure, n_query: int = 1) -> "MeasureView":
        pts = lam.unit_atoms()
        return cls(pts, np.zeros(len(pts), dtype=np.int64), 1, np.zeros(n_query, dtype=np.int64))

    @property
    def group_mass(self) -> np.ndarray:
        if self._counts is None:
            self._counts = np.bincount(self.groups, minlength=self.n_groups).astype(float)
        return self._counts

    @property
    def mass(self) -> np.ndarray:
        """Total mass of the population each query point belongs to."""
        return self.group_mass[self.query_groups]

    def group_integral(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        if len(self.positions) == 0:
            return np.zeros(self.n_groups)
        return np.bincount(self.groups, weights=f(self.positions), minlength=self.n_groups)

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """<f, lam> for each query point; ``f`` maps ``(m, d)`` to ``(m,)``."""
        return self.group_integral(f)[self.query_groups]

    def measure(self, group: int) -> AtomicMeasure:
        d = self.positions.shape[1]
        return AtomicMeasure.from_atoms(self.positions[self.groups == group], dimension=d)


# --------------------------------------------------------------------------
# time-dependent coefficient tables


class Table:
    """Piecewise-linear function of time with array values.

    Outside the knot range the end values are held constant.
    """

    def __init__(self, times: Sequence[float], values):
        self.times = np.asarray(times, dtype=float).reshape(-1)
        self.values = np.asarray(values, dtype=float)
        if len(self.times) == 0 or self.values.shape[0] != len(self.times):
            raise ValueError("table needs one value per knot")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("table knots must be strictly increasing")
        self.shape = self.values.shape[1:]
        self.is_constant = len(self.times) == 1 or bool(np.all(self.values == self.values[0]))

    @classmethod
    def constant(cls, value) -> "Table":
        value = np.asarray(value, dtype=float)
        return cls([0.0], value[None, ...])

    @classmethod
    def coerce(cls, value) -> "Table":
        if isinstance(value, Table):
            return value
        if isinstance(value, dict):
            return cls(value["times"], value["values"])
        return cls.constant(value)

    def at(self, t: float) -> np.ndarray:
        return self(np.array([float(t)]))[0]

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.is_constant:
            return np.broadcast_to(self.values[0], t.shape + self.shape)
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        t0, t1 = self.times[idx], self.times[idx + 1]
        w = np.clip((t - t0) / (t1 - t0), 0.0, 1.0)
        w = w.reshape(w.shape + (1,) * len(self.shape))
        return (1.0 - w) * self.values[idx] + w * self.values[idx + 1]

    def sup_norm(self, norm=None) -> float:
        norm = norm or (lambda v: float(np.max(np.abs(v))) if np.size(v) else 0.0)
        return max(norm(v) for v in self.values)

    def to_json(self):
        if len(self.times) == 1:
            return self.values[0].tolist()
        return {"times": self.times.tolist(), "values": self.values.tolist()}


def matvec(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-wise ``m @ x`` for ``m`` of shape ``(n, r, c)`` or ``(r, c)``.

    Written as an explicit sum over columns so every row is accumulated in
    the same order whatever the batch size.
    """
    if m.ndim == 2:
        m = m[None, :, :]
    out = m[:, :, 0] * x[:, 0, None]
    for j in range(1, x.shape[1]):
        out = out + m[:, :, j] * x[:, j, None]
    return out


def quadratic_form(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-wise ``x^T m x``."""
    mx = matvec(m, x)
    out = x[:, 0] * mx[:, 0]
    for j in range(1, x.shape[1]):
        out = out + x[:, j] * mx[:, j]
    return out


# --------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class Bounds:
    drift: float  # C_b
    volatility: float  # C_sigma
    rate: float  # C_gamma
    first_moment: float  # C^1_Phi
    second_moment: float  # C^2_Phi
    cost: float  # C_Psi
    cost_coercivity: float  # c_psi

    def to_json(self) -> dict:
        return {
            "C_b": self.drift,
            "C_sigma": self.volatility,
            "C_gamma": self.rate,
            "C1_Phi": self.first_moment,
            "C2_Phi": self.second_moment,
            "C_Psi": self.cost,
            "c_psi": self.cost_coercivity,
        }


Evaluator = Callable[[np.ndarray, np.ndarray, MeasureView, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Scenario:
    drift: Evaluator
    volatility: Evaluator
    branch_rate: Evaluator
    offspring_probs: Evaluator
    running_cost: Evaluator
    terminal_cost: Callable[[AtomicMeasure], float]
    bounds: Bounds
    dim: int
    noise_dim: int
    action_dim: int
    action_box: tuple[np.ndarray, np.ndarray] | None = None
    kind: str = "custom"
    filippov: bool = False
    filippov_note: str = ""
    # extra structure used by closed-form solvers (LQ coefficients, kinetic parts)
    details: dict[str, Any] = field(default_factory=dict)

    def action_in_set(self, a: np.ndarray) -> np.ndarray:
        ok = np.all(np.isfinite(a), axis=-1)
        if self.action_box is not None:
            lo, hi = self.action_box
            ok &= np.all((a >= lo) & (a <= hi), axis=-1)
        return ok

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.dim,
            "d_noise": self.noise_dim,
            "q": self.action_dim,
            "bounds": self.bounds.to_json(),
            "action_set": "R^q"
            if self.action_box is None
            else {"low": self.action_box[0].tolist(), "high": self.action_box[1].tolist()},
            "filippov": {"holds": self.filippov, "reason": self.filippov_note},
        }


def _point_args(scn: Scenario, t, x, lam: AtomicMeasure, a):
    x = np.asarray(x, dtype=float).reshape(1, scn.dim)
    a = np.zeros((1, scn.action_dim)) if a is None else np.asarray(a, dtype=float).reshape(1, scn.action_dim)
    return np.array([float(t)]), x, MeasureView.of_measure(lam), a


# --------------------------------------------------------------------------
# offspring intervals


@dataclass(frozen=True)
class Thinned:
    pass


@dataclass(frozen=True)
class Offspring:
    k: int


def offspring_index(rate: np.ndarray, probs: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Vectorised interval lookup: ``k`` with ``z`` in ``I_k``, or -1 when ``z >= rate``.

    ``I_k = [rate * sum_{l<k} p_l, rate * sum_{l<=k} p_l)``.
    """
    rate = np.asarray(rate, dtype=float)
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    z = np.asarray(z, dtype=float)
    upper = rate[:, None] * np.cumsum(probs, axis=1)
    k = np.sum(upper <= z[:, None], axis=1)
    # rounding can leave rate*cumsum[-1] a hair below rate; fall back to the
    # last offspring number that has positive probability
    last = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    k = np.minimum(k, last)
    return np.where(z >= rate, -1, k)


def check_law(probs: np.ndarray) -> None:
    probs = np.atleast_2d(probs)
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > PROB_TOL):
        raise InvalidScenario(f"offspring probabilities must be non-negative and sum to 1: {probs}")


def offspring_from_mark(scn: Scenario, t, x, lam: AtomicMeasure, a, z: float) -> Thinned | Offspring:
    if not (0.0 <= z <= scn.bounds.rate):
        raise MarkOutOfRange(f"mark {z} outside [0, {scn.bounds.rate}]")
    args = _point_args(scn, t, x, lam, a)
    rate = np.asarray(scn.branch_rate(*args), dtype=float).reshape(1)
    probs = np.asarray(scn.offspring_probs(*args), dtype=float).reshape(1, -1)
    check_law(probs)
    k = int(offspring_index(rate, probs, np.array([z]))[0])
    return Thinned() if k < 0 else Offspring(k)


def law_moments(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``M1 = sum (k-1) p_k`` and ``M2 = sum (k-1)^2 p_k`` along the last axis."""
    probs = np.asarray(probs, dtype=float)
    km1 = np.arange(probs.shape[-1]) - 1.0
    return probs @ km1, probs @ (km1**2)


def factorial_moments(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``sum k p_k`` and ``sum k(k-1) p_k`` along the last axis."""
    probs = np.asarray(probs, dtype=float)
    k = np.arange(probs.shape[-1], dtype=float)
    return probs @ k, probs @ (k * (k - 1.0))


def moments_M(scn: Scenario, t, x, lam: AtomicMeasure, a=None) -> tuple[float, float]:
    probs = np.asarray(scn.offspring_probs(*_point_args(scn, t, x, lam, a)), dtype=float).reshape(-1)
    m1, m2 = law_moments(probs)
    return float(m1), float(m2)


# --------------------------------------------------------------------------
# built-in linear-quadratic scenario


@dataclass(frozen=True)
class LQCoefficients:
    """Coefficients of the linear-quadratic branching control problem.

    Matrix-valued entries may be constants or :class:`Table` objects.
    ``sigma`` and ``gamma`` are scalar tables; ``probs`` is a fixed law.
    """

    B: Table
    Bbar: Table
    sigma: Table
    gamma: Table
    probs: np.ndarray
    C: Table
    c: Table
    Cbar: Table
    H: np.ndarray
    h: float
    horizon: float

    @classmethod
    def build(cls, *, B, Bbar, sigma, gamma, probs, C, c=0.0, Cbar, H, h=0.0, horizon=1.0):
        B, Bbar, C, Cbar = (Table.coerce(v) for v in (B, Bbar, C, Cbar))
        d = _square_dim(B, "B")
        if Bbar.shape == ():
            Bbar = Table(Bbar.times, Bbar.values.reshape(-1, 1, 1))
        if len(Bbar.shape) != 2 or Bbar.shape[0] != d:
            raise InvalidScenario(f"Bbar must be {d}x q, got {Bbar.shape}")
        q = Bbar.shape[1]
        C = _as_matrix_table(C, d, "C")
        Cbar = _as_matrix_table(Cbar, q, "Cbar")
        H = np.asarray(H, dtype=float).reshape(d, d)
        probs = np.asarray(probs, dtype=float).reshape(-1)
        check_law(probs)
        return cls(
            B=_as_matrix_table(B, d, "B", symmetric=False),
            Bbar=Bbar,
            sigma=Table.coerce(sigma),
            gamma=Table.coerce(gamma),
            probs=probs,
            C=C,
            c=Table.coerce(c),
            Cbar=Cbar,
            H=H,
            h=float(h),
            horizon=float(horizon),
        )

    @property
    def d(self) -> int:
        return self.B.shape[0]

    @property
    def q(self) -> int:
        return self.Bbar.shape[1]

    def to_json(self) -> dict:
        return {
            "B": self.B.to_json(),
            "Bbar": self.Bbar.to_json(),
            "sigma": self.sigma.to_json(),
            "gamma": self.gamma.to_json(),
            "probs": self.probs.tolist(),
            "C": self.C.to_json(),
            "c": self.c.to_json(),
            "Cbar": self.Cbar.to_json(),
            "H": self.H.tolist(),
            "h": self.h,
            "horizon": self.horizon,
        }


def _square_dim(table: Table, name: str) -> int:
    if table.shape == ():
        return 1
    if len(table.shape) != 2 or table.shape[0] != table.shape[1]:
        raise InvalidScenario(f"{name} must be square, got shape {table.shape}")
    return table.shape[0]


def _as_matrix_table(table: Table, n: int, name: str, symmetric: bool = True) -> Table:
    vals = table.values.reshape(len(table.times), n, n)
    if symmetric and not np.allclose(vals, np.swapaxes(vals, 1, 2), atol=1e-12):
        raise InvalidScenario(f"{name} must be symmetric")
    return Table(table.times, vals)


def _min_eig(table: Table) -> float:
    return min(float(np.linalg.eigvalsh(v).min()) for v in table.values)


def builtin_lq(coef: LQCoefficients, *, cost_bound: float | None = None) -> Scenario:
    """Affine drift, scalar-times-identity noise, control-free branching, quadratic costs."""
    d, q = coef.d, coef.q
    if _min_eig(coef.C) < -1e-12 or float(np.linalg.eigvalsh(coef.H).min()) < -1e-12:
        raise InvalidScenario("C and H must be positive semidefinite")
    if not np.allclose(coef.H, coef.H.T, atol=1e-12):
        raise InvalidScenario("H must be symmetric")
    eps = _min_eig(coef.Cbar)
    if eps <= 0:
        raise InvalidScenario("Cbar must be uniformly positive definite")
    if coef.h < 0 or float(coef.c.values.min()) < 0:
        raise InvalidScenario("c and h must be non-negative")
    if float(coef.gamma.values.min()) < 0 or float(coef.sigma.values.min()) < 0:
        raise InvalidScenario("gamma and sigma must be non-negative")
    probs = coef.probs
    eye = np.eye(d)

    def drift(t, x, lam, a):
        return matvec(coef.B(t), x) + matvec(coef.Bbar(t), a)

    def volatility(t, x, lam, a):
        return coef.sigma(t)[:, None, None] * eye[None, :, :]

    def branch_rate(t, x, lam, a):
        return np.array(coef.gamma(t), dtype=float)

    def offspring_probs(t, x, lam, a):
        return np.broadcast_to(probs, (len(x), len(probs)))

    def running_cost(t, x, lam, a):
        return quadratic_form(coef.C(t), x) + coef.c(t) * lam.mass + quadratic_form(coef.Cbar(t), a)

    def terminal_cost(lam: AtomicMeasure) -> float:
        if lam.mass == 0:
            return 0.0
        pts = lam.unit_atoms()
        return float(np.sum(quadratic_form(coef.H, pts))) + coef.h * lam.mass**2

    def terminal_cost_groups(positions, groups, n_groups):
        quad = np.bincount(groups, weights=quadratic_form(coef.H, positions), minlength=n_groups)
        mass = np.bincount(groups, minlength=n_groups).astype(float)
        return quad + coef.h * mass**2

    op = lambda m: float(np.linalg.norm(m, 2))
    first, second = factorial_moments(probs)
    declared_cost = max(
        coef.C.sup_norm(op), coef.Cbar.sup_norm(op), op(coef.H), coef.h, coef.c.sup_norm(), 1.0
    )
    bounds = Bounds(
        drift=max(coef.B.sup_norm(op), coef.Bbar.sup_norm(op)),
        volatility=coef.sigma.sup_norm() * np.sqrt(d),
        rate=coef.gamma.sup_norm(),
        first_moment=float(first),
        second_moment=float(second),
        cost=declared_cost if cost_bound is None else float(cost_bound),
        cost_coercivity=eps,
    )
    return Scenario(
        drift=drift,
        volatility=volatility,
        branch_rate=branch_rate,
        offspring_probs=offspring_probs,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        bounds=bounds,
        dim=d,
        noise_dim=d,
        action_dim=q,
        kind="lq",
        filippov=True,
        filippov_note="drift is affine in a, branching ignores a and the running cost is convex in a",
        details={"lq": coef, "terminal_cost_groups": terminal_cost_groups},
    )


# --------------------------------------------------------------------------
# built-in kinetic-energy scenario


@dataclass(frozen=True)
class KineticParts:
    """Model pieces of the kinetic-energy example, each vectorised over ``x``.

    ``drift(t, x) -> (n, d)``, ``rate(t, x) -> (n,)``, ``probs(t, x) -> (n, K)``,
    ``terminal(x) -> (n,)``.
    """

    drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    rate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    probs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    terminal: Callable[[np.ndarray], np.ndarray]
    dim: int = 1

    def potential(self, t, x) -> np.ndarray:
        """``rate * (sum_k k p_k - 1)``, the linear term of the HJB equation."""
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(x),))
        mean, _ = factorial_moments(self.probs(t, x))
        return self.rate(t, x) * (mean - 1.0)


def _const_fn(value, width=None):
    value = np.asarray(value, dtype=float)

    def fn(t, x):
        return np.broadcast_to(value, (len(x),) + value.shape).copy()

    return fn


def builtin_kinetic(
    drift=None,
    rate=0.0,
    probs=(0.0, 1.0),
    terminal=None,
    *,
    dim: int = 1,
    rate_bound: float | None = None,
    drift_bound: float = 1.0,
    moment_bounds: tuple[float, float] | None = None,
    cost_bound: float | None = None,
) -> Scenario:
    """Controlled drift ``b(t, x) + a``, unit noise, running cost ``|a|^2 / 2``.

    ``rate`` and ``probs`` may be constants or callables of ``(t, x)``;
    ``terminal`` is the per-particle terminal function G so that the terminal
    cost is ``<G, lam>`` (``None`` means G = 0).
    """
    drift_fn = drift if callable(drift) else _const_fn(np.zeros(dim) if drift is None else drift)
    rate_fn = rate if callable(rate) else _const_fn(rate)
    probs_fn = probs if callable(probs) else _const_fn(probs)
    g_fn = terminal if terminal is not None else (lambda x: np.zeros(len(x)))

    if callable(rate) and rate_bound is None:
        raise InvalidScenario("a state-dependent rate needs a declared rate_bound")
    if callable(probs) and moment_bounds is None:
        raise InvalidScenario("a state-dependent offspring law needs declared moment_bounds")
    if not callable(probs):
        check_law(np.asarray(probs, dtype=float))
        m1, m2 = factorial_moments(np.asarray(probs, dtype=float))
        moment_bounds = (float(m1), float(m2))
    c_gamma = float(rate) if rate_bound is None else float(rate_bound)

    parts = KineticParts(drift_fn, rate_fn, probs_fn, g_fn, dim)
    eye = np.eye(dim)

    def b(t, x, lam, a):
        return drift_fn(t, x) + a

    def sig(t, x, lam, a):
        return np.broadcast_to(eye, (len(x), dim, dim))

    def gamma(t, x, lam, a):
        return np.asarray(rate_fn(t, x), dtype=float)

    def law(t, x, lam, a):
        return np.asarray(probs_fn(t, x), dtype=float)

    def psi(t, x, lam, a):
        return 0.5 * np.sum(a * a, axis=1)

    def terminal_cost(lam: AtomicMeasure) -> float:
        if lam.mass == 0:
            return 0.0
        return float(np.sum(lam.multiplicities * g_fn(lam.positions)))

    def terminal_cost_groups(positions, groups, n_groups):
        return np.bincount(groups, weights=g_fn(positions), minlength=n_groups)

    bounds = Bounds(
        drift=float(drift_bound),
        volatility=float(np.sqrt(dim)),
        rate=c_gamma,
        first_moment=moment_bounds[0],
        second_moment=moment_bounds[1],
        cost=1.0 if cost_bound is None else float(cost_bound),
        cost_coercivity=0.5,
    )
    return Scenario(
        drift=b,
        volatility=sig,
        branch_rate=gamma,
        offspring_probs=law,
        running_cost=psi,
        terminal_cost=terminal_cost,
        bounds=bounds,
        dim=dim,
        noise_dim=dim,
        action_dim=dim,
        kind="kinetic",
        filippov=True,
        filippov_note="drift is affine in a, branching ignores a and the running cost is convex in a",
        details={"kinetic": parts, "terminal_cost_groups": terminal_cost_groups},
    )


# --------------------------------------------------------------------------
# sampling spot-checks of declared bounds


@dataclass
class BoundCheck:
    name: str
    violations: int
    samples: int
    worst_excess: float

    @property
    def ok(self) -> bool:
        return self.violations == 0


def spot_check(scn: Scenario, samples: int = 2000, seed: int = 0, spread: float = 3.0, max_mass: int = 5) -> list[BoundCheck]:
    """Sample ``(t, x, lam, a)`` and test the declared growth/coercivity constants.

    Returns one :class:`BoundCheck` per inequality; nothing is raised.
    """
    rng = np.random.default_rng(seed)
    T = float(scn.details["lq"].horizon) if "lq" in scn.details else 1.0
    b = scn.bounds
    checks = {k: [0, 0.0] for k in ("law", "rate", "moments", "drift", "vol", "psi_above", "psi_below", "Psi_above", "Psi_below")}

    def record(name, excess):
        excess = np.atleast_1d(excess)
        bad = excess > 1e-9
        checks[name][0] += int(bad.sum())
        if bad.any():
            checks[name][1] = max(checks[name][1], float(excess.max()))

    for _ in range(samples // 10 or 1):
        m = int(rng.integers(1, max_mass + 1))
        pts = rng.normal(scale=spread, size=(m, scn.dim))
        if rng.random() < 0.3:
            pts[:] = pts[0]  # stacked atoms: large mass at one location
        lam = AtomicMeasure.from_atoms(pts)
        n = 10
        t = rng.uniform(0, T, size=n)
        x = rng.normal(scale=spread, size=(n, scn.dim))
        a = rng.normal(scale=spread, size=(n, scn.action_dim))
        if scn.action_box is not None:
            a = np.clip(a, *scn.action_box)
        view = MeasureView.of_measure(lam, n)
        probs = np.atleast_2d(scn.offspring_probs(t, x, view, a))
        record("law", np.abs(probs.sum(axis=1) - 1.0) - PROB_TOL)
        rate = np.broadcast_to(scn.branch_rate(t, x, view, a), (n,))
        record("rate", rate - b.rate)
        first, second = factorial_moments(probs)
        record("moments", np.maximum(first - b.first_moment, second - b.second_moment))
        nx = np.linalg.norm(x, axis=1)
        na = np.linalg.norm(a, axis=1)
        drift = scn.drift(t, x, view, a)
        record("drift", np.linalg.norm(drift, axis=1) - b.drift * (1 + nx + na))
        vol = scn.volatility(t, x, view, a)
        record("vol", np.linalg.norm(vol.reshape(n, -1), axis=1) - b.volatility)
        psi = scn.running_cost(t, x, view, a)
        first_abs = float(np.sum(np.linalg.norm(pts, axis=1)))
        second_abs = float(np.sum(np.sum(pts**2, axis=1)))
        record("psi_above", psi - b.cost * (1 + nx**2 + first_abs + na**2))
        record("psi_below", -b.cost * (1 + nx) + b.cost_coercivity * na**2 - psi)
        big = scn.terminal_cost(lam)
        record("Psi_above", big - b.cost * (1 + second_abs + lam.mass**2))
        record("Psi_below", -b.cost * (1 + first_abs + lam.mass) - big)

    total = (samples // 10 or 1) * 10
    return [BoundCheck(k, v[0], total if k not in ("Psi_above", "Psi_below") else total // 10, v[1]) for k, v in checks.items()]
