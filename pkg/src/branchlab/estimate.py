"""Monte Carlo estimators and statistical checks on simulated populations.

Replications are split into fixed-size chunks and each chunk runs as one
:class:`~branchlab.simulate.Ensemble`. Every replication's trajectory is a
function of its own seed only, and per-replication results are reduced in
replication order with ``math.fsum``, so the numbers do not depend on the
chunking or on how many worker threads run the chunks.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from branchlab import streams
from branchlab.measure import AtomicMeasure
from branchlab.policy import Policy
from branchlab.scenario import MeasureView, Scenario, law_moments
from branchlab.simulate import (
    Ensemble,
    ExplosionError,
    Observer,
    SimConfig,
    StepContext,
    snap_times,
    time_grid,
)

CHUNK = 2048
Z_THRESHOLD = 4.0
SLACK_SE = 3.0


# --------------------------------------------------------------------------
# summary statistics


def mean_se(values: np.ndarray) -> tuple[float, float]:
    """Sample mean and standard error, summed with ``math.fsum``."""
    v = np.asarray(values, dtype=float).reshape(-1)
    n = len(v)
    if n == 0:
        return math.nan, math.nan
    m = math.fsum(v) / n
    if n < 2:
        return m, math.nan
    var = math.fsum((v - m) ** 2) / (n - 1)
    return m, math.sqrt(var / n)


def z_score(mean: float, se: float) -> float:
    if se > 0:
        return mean / se
    if mean == 0 or math.isnan(mean):
        return 0.0
    return math.copysign(math.inf, mean)


@dataclass(frozen=True)
class EstimateResult:
    mean: float
    standard_error: float
    replications: int
    seed: int

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "standard_error": self.standard_error,
            "replications": self.replications,
            "seed": self.seed,
        }


# --------------------------------------------------------------------------
# replication fan-out


def replication_seeds(seed: int, reps: int) -> np.ndarray:
    return streams.replication_seed(seed, np.arange(reps, dtype=np.uint64))


def run_replications(
    scn: Scenario,
    pol: Policy,
    t: float,
    lam0: AtomicMeasure,
    cfg: SimConfig,
    seeds: np.ndarray,
    collect: Callable[[Ensemble, list], dict],
    make_observers: Callable[[], list] = list,
    grid: np.ndarray | None = None,
    threads: int = 1,
    chunk: int = CHUNK,
) -> dict[str, np.ndarray]:
    """Run all replications and gather per-replication arrays in seed order.

    ``collect(ens, observers)`` returns a dict of arrays whose first axis
    runs over the chunk's replications.
    """
    grid = time_grid(t, cfg) if grid is None else grid
    parts = [seeds[i : i + chunk] for i in range(0, len(seeds), chunk)]

    def work(part):
        obs = make_observers()
        ens = Ensemble(scn, pol, t, lam0, cfg, part)
        ens.run(obs, grid)
        return collect(ens, obs)

    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, parts))
    else:
        results = [work(p) for p in parts]
    return {k: np.concatenate([r[k] for r in results]) for k in results[0]}


def _basic(ens: Ensemble, obs) -> dict:
    return {
        "running": ens.running_cost.copy(),
        "terminal": ens.terminal_costs(),
        "exploded": ens.exploded.copy(),
        "max_count": ens.max_count.astype(float),
        "count": ens.count.astype(float),
    }


# --------------------------------------------------------------------------
# cost


def simulate_costs(scn, pol, t, lam0, cfg, reps, seed, threads=1) -> dict[str, np.ndarray]:
    out = run_replications(scn, pol, t, lam0, cfg, replication_seeds(seed, reps), _basic, threads=threads)
    out["cost"] = out["running"] + out["terminal"]
    return out


def estimate_cost(
    scn: Scenario, pol: Policy, t: float, lam0: AtomicMeasure, cfg: SimConfig, reps: int, seed: int, threads: int = 1
) -> EstimateResult:
    """Mean and SE of running plus terminal cost over ``reps`` independent paths."""
    if reps < 2:
        raise ValueError("need at least two replications for a standard error")
    out = simulate_costs(scn, pol, t, lam0, cfg, reps, seed, threads)
    failed = int(out["exploded"].sum())
    if failed:
        raise ExplosionError(f"{failed} of {reps} replications exceeded the population cap", failed=failed)
    m, se = mean_se(out["cost"])
    return EstimateResult(m, se, reps, seed)


@dataclass(frozen=True)
class Comparison:
    """Paired cost difference ``J(first) - J(second)`` on common seeds."""

    first: EstimateResult
    second: EstimateResult
    difference: EstimateResult
    names: tuple[str, str]

    @property
    def significant(self) -> bool:
        """True when the difference is more than three standard errors from zero."""
        return abs(self.difference.mean) > SLACK_SE * self.difference.standard_error

    def to_json(self) -> dict:
        return {
            "policies": list(self.names),
            "first": self.first.to_json(),
            "second": self.second.to_json(),
            "difference": self.difference.to_json(),
            "significant_at_3se": self.significant,
            "common_random_numbers": True,
        }


def compare(scn, pol_a: Policy, pol_b: Policy, t, lam0, cfg, reps: int, seed: int, threads: int = 1) -> Comparison:
    """Both policies run on the same replication seeds, so the difference has low variance."""
    ca = simulate_costs(scn, pol_a, t, lam0, cfg, reps, seed, threads)
    cb = simulate_costs(scn, pol_b, t, lam0, cfg, reps, seed, threads)
    failed = int((ca["exploded"] | cb["exploded"]).sum())
    if failed:
        raise ExplosionError(f"{failed} of {reps} paired replications exceeded the population cap", failed=failed)
    res = [EstimateResult(*mean_se(v), reps, seed) for v in (ca["cost"], cb["cost"], ca["cost"] - cb["cost"])]
    return Comparison(res[0], res[1], res[2], (pol_a.name, pol_b.name))


# --------------------------------------------------------------------------
# moment bounds


@dataclass(frozen=True)
class BoundComparison:
    name: str
    estimate: float
    standard_error: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.estimate - SLACK_SE * self.standard_error <= self.bound

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "estimate": self.estimate,
            "standard_error": self.standard_error,
            "bound": self.bound,
            "ok": self.ok,
        }


@dataclass
class MomentReport:
    checks: list[BoundComparison]
    replications: int
    seed: int
    failed: int
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "replications": self.replications,
            "seed": self.seed,
            "failed": self.failed,
            "checks": [c.to_json() for c in self.checks],
            "info": self.info,
        }


def check_moment_bounds(scn, pol, t, lam0, cfg, reps: int, seed: int, threads: int = 1) -> MomentReport:
    """Compare E sup|V| and E sup|V|^2 over [t, T] with the exponential bounds.

    The bounds use the declared constants: ``N0 exp(C_gamma C1 h)`` and
    ``N0^2 exp(C_gamma (C1 + C2) h)`` with ``N0 = <1, lam0>`` and ``h = T - t``.
    The second one is squared in ``N0``: without branching ``sup|V|^2 = N0^2``.
    """

    def collect(ens, obs):
        out = _basic(ens, obs)
        out["pos2"] = np.bincount(ens.rep, weights=np.sum(ens.X**2, axis=1), minlength=ens.R)
        return out

    out = run_replications(scn, pol, t, lam0, cfg, replication_seeds(seed, reps), collect, threads=threads)
    ok = ~out["exploded"]
    n0 = float(lam0.mass)
    h = cfg.horizon - t
    b = scn.bounds
    sup1 = out["max_count"][ok]
    m1, s1 = mean_se(sup1)
    m2, s2 = mean_se(sup1**2)
    checks = [
        BoundComparison("E sup|V|", m1, s1, n0 * math.exp(b.rate * b.first_moment * h)),
        BoundComparison("E sup|V|^2", m2, s2, n0 * n0 * math.exp(b.rate * (b.first_moment + b.second_moment) * h)),
    ]
    pm, ps = mean_se(out["pos2"][ok])
    info = {"E sum|Y_T|^2": pm, "E sum|Y_T|^2 SE": ps, "E |V_T|": mean_se(out["count"][ok])[0]}
    return MomentReport(checks, reps, seed, int(out["exploded"].sum()), info)


# --------------------------------------------------------------------------
# test functions for the martingale problem


@dataclass(frozen=True)
class OuterFunction:
    """Scalar C^2 function F with its first two derivatives."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    d2f: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TestFunction:
    """Bounded C^2 function phi on R^d: value ``(n,)``, gradient ``(n, d)``, Hessian ``(n, d, d)``."""

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]

    __test__ = False  # not a pytest class


def _one():
    return TestFunction(
        "one",
        lambda x: np.ones(len(x)),
        lambda x: np.zeros_like(x),
        lambda x: np.zeros(x.shape + (x.shape[1],)),
    )


def _bump(width: float = 1.0):
    w2 = width * width

    def value(x):
        return np.exp(-0.5 * np.sum(x * x, axis=1) / w2)

    def grad(x):
        return -x / w2 * value(x)[:, None]

    def hess(x):
        d = x.shape[1]
        v = value(x)
        outer = x[:, :, None] * x[:, None, :] / (w2 * w2)
        return (outer - np.eye(d)[None] / w2) * v[:, None, None]

    return TestFunction(f"bump:{width:g}", value, grad, hess)


def _sigmoid(scale: float = 1.0):
    def s(x):
        return 1.0 / (1.0 + np.exp(-scale * x[:, 0]))

    def grad(x):
        v = s(x)
        g = np.zeros_like(x)
        g[:, 0] = scale * v * (1 - v)
        return g

    def hess(x):
        v = s(x)
        hs = np.zeros(x.shape + (x.shape[1],))
        hs[:, 0, 0] = scale * scale * v * (1 - v) * (1 - 2 * v)
        return hs

    return TestFunction(f"sigmoid:{scale:g}", s, grad, hess)


OUTER = {
    "y": OuterFunction("y", lambda y: y, np.ones_like, np.zeros_like),
    "y2": OuterFunction("y2", lambda y: y * y, lambda y: 2 * y, lambda y: np.full_like(y, 2.0)),
    "exp-neg": OuterFunction("exp-neg", lambda y: np.exp(-y), lambda y: -np.exp(-y), lambda y: np.exp(-y)),
}


def test_function(name: str) -> TestFunction:
    """Built-in test functions: ``one``, ``bump[:width]``, ``sigmoid[:scale]``."""
    kind, _, arg = name.partition(":")
    if kind == "one":
        return _one()
    if kind == "bump":
        return _bump(float(arg) if arg else 1.0)
    if kind == "sigmoid":
        return _sigmoid(float(arg) if arg else 1.0)
    raise ValueError(f"unknown test function {name!r}")


test_function.__test__ = False


def outer_function(name: str) -> OuterFunction:
    try:
        return OUTER[name]
    except KeyError:
        raise ValueError(f"unknown outer function {name!r}; expected one of {sorted(OUTER)}") from None


# --------------------------------------------------------------------------
# generator of the measure-valued process on cylinder functions


def _sigma_t_grad(vol: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``sigma^T g`` per particle, ``(n, d')``."""
    n, d, dp = vol.shape
    out = np.zeros((n, dp))
    for j in range(dp):
        for i in range(d):
            out[:, j] += vol[:, i, j] * g[:, i]
    return out


def _trace_ssT_hess(vol: np.ndarray, hs: np.ndarray) -> np.ndarray:
    n, d, dp = vol.shape
    out = np.zeros(n)
    for i in range(d):
        for k in range(d):
            a = np.zeros(n)
            for j in range(dp):
                a += vol[:, i, j] * vol[:, k, j]
            out += a * hs[:, i, k]
    return out


@dataclass
class _Local:
    """Per-particle pieces of the generator shared by all (F, phi) pairs."""

    rate: np.ndarray
    probs: np.ndarray


def generator_terms(scn: Scenario, ctx: StepContext, F: OuterFunction, phi: TestFunction, local: _Local | None = None):
    """Per-particle generator of ``F(<phi, xi>)`` and quadratic-variation density of ``<phi, xi>``.

    Returns ``(gen, qv)``, both shape ``(n,)``; summing over a population's
    particles gives the drift of ``F(<phi, xi>)`` and, for the identity ``F``,
    the rate of its quadratic variation.
    """
    x = ctx.x
    n = len(x)
    if local is None:
        local = _local(scn, ctx)
    y = ctx.view.integrate(phi.value)
    v, g, hs = phi.value(x), phi.grad(x), phi.hess(x)
    drift_part = np.zeros(n)
    for i in range(x.shape[1]):
        drift_part += ctx.drift[:, i] * g[:, i]
    drift_part += 0.5 * _trace_ssT_hess(ctx.vol, hs)
    sg = _sigma_t_grad(ctx.vol, g)
    sg2 = np.sum(sg * sg, axis=1)
    fy = F.f(y)
    jump = np.zeros(n)
    for k in range(local.probs.shape[1]):
        pk = local.probs[:, k]
        jump += pk * (F.f(y + (k - 1) * v) - fy)
    gen = F.df(y) * drift_part + 0.5 * F.d2f(y) * sg2 + local.rate * jump
    _, m2 = law_moments(local.probs)
    qv = sg2 + local.rate * m2 * v * v
    return gen, qv


def _local(scn: Scenario, ctx: StepContext) -> _Local:
    n = len(ctx.x)
    rate = np.broadcast_to(np.asarray(scn.branch_rate(ctx.t, ctx.x, ctx.view, ctx.a), dtype=float).reshape(-1), (n,))
    probs = np.asarray(scn.offspring_probs(ctx.t, ctx.x, ctx.view, ctx.a), dtype=float).reshape(n, -1)
    return _Local(rate, probs)


class _Compensators(Observer):
    """Accumulates compensators left-point and samples the processes at checkpoints."""

    def __init__(self, scn, pairs, keep: list[int], qv: bool):
        self.scn = scn
        self.pairs = pairs
        self.keep = {k: j for j, k in enumerate(keep)}
        self.qv = qv
        self.A = None
        self.Q = None
        self.values = None  # (R, n_pairs, n_checkpoints)
        self.comp = None
        self.qvs = None

    def _alloc(self, R):
        P, K = len(self.pairs), len(self.keep)
        self.A = np.zeros((P, R))
        self.Q = np.zeros((P, R))
        self.values = np.zeros((R, P, K))
        self.comp = np.zeros((R, P, K))
        self.qvs = np.zeros((R, P, K))

    def on_substep(self, ens, ctx):
        if self.A is None:
            self._alloc(ens.R)
        local = _local(self.scn, ctx)
        for j, (F, phi) in enumerate(self.pairs):
            gen, qv = generator_terms(self.scn, ctx, F, phi, local)
            self.A[j] += np.bincount(ctx.groups, weights=gen * ctx.h, minlength=ens.R)
            if self.qv:
                self.Q[j] += np.bincount(ctx.groups, weights=qv * ctx.h, minlength=ens.R)

    def on_grid(self, ens, k, t):
        if self.A is None:
            self._alloc(ens.R)
        if k not in self.keep:
            return
        c = self.keep[k]
        view = ens.view()
        for j, (F, phi) in enumerate(self.pairs):
            self.values[:, j, c] = F.f(view.group_integral(phi.value))
            self.comp[:, j, c] = self.A[j]
            self.qvs[:, j, c] = self.Q[j]


@dataclass(frozen=True)
class Interval:
    start: float
    end: float
    mean: float
    standard_error: float
    z: float
    ok: bool

    def to_json(self) -> dict:
        return {
            "s": self.start,
            "h": self.end - self.start,
            "mean": self.mean,
            "SE": self.standard_error,
            "z": self.z,
            "verdict": "pass" if self.ok else "fail",
        }


@dataclass
class MartingaleTestReport:
    """Per-interval z-tests of a process that should have zero-mean increments.

    ``mode`` is ``martingale`` (two-sided, |z| < threshold) or
    ``submartingale`` (one-sided, z > -threshold).
    """

    descriptor: str
    intervals: list[Interval]
    replications: int
    failed: int
    threshold: float = Z_THRESHOLD
    mode: str = "martingale"

    @property
    def max_abs_z(self) -> float:
        return max((abs(iv.z) for iv in self.intervals), default=0.0)

    @property
    def passed(self) -> bool:
        return all(iv.ok for iv in self.intervals)

    def to_json(self) -> dict:
        return {
            "test": self.descriptor,
            "mode": self.mode,
            "replications": self.replications,
            "failed": self.failed,
            "threshold": self.threshold,
            "max_abs_z": self.max_abs_z,
            "passed": self.passed,
            "intervals": [iv.to_json() for iv in self.intervals],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test", "s", "h", "mean", "SE", "z", "verdict"])
        for iv in self.intervals:
            row = iv.to_json()
            w.writerow([self.descriptor] + [f"{row[k]:.17g}" for k in ("s", "h", "mean", "SE", "z")] + [row["verdict"]])
        return buf.getvalue()


def _interval_reports(times, samples, descriptor, failed, threshold, mode) -> MartingaleTestReport:
    """``samples`` is ``(reps, n_checkpoints)``; increments between consecutive checkpoints are tested."""
    out = []
    for c in range(len(times) - 1):
        inc = samples[:, c + 1] - samples[:, c]
        m, se = mean_se(inc)
        z = z_score(m, se)
        ok = abs(z) < threshold if mode == "martingale" else z > -threshold
        out.append(Interval(float(times[c]), float(times[c + 1]), m, se, z, bool(ok)))
    return MartingaleTestReport(descriptor, out, samples.shape[0] + failed, failed, threshold, mode)


def _checkpoint_grid(t, cfg, checkpoints):
    pts = sorted({float(t), float(cfg.horizon), *map(float, checkpoints)})
    grid = time_grid(t, cfg, pts)
    return pts, grid, snap_times(grid, pts)


def martingale_tests(
    scn: Scenario,
    pol: Policy,
    t: float,
    lam0: AtomicMeasure,
    cfg: SimConfig,
    reps: int,
    pairs: Sequence[tuple[OuterFunction, TestFunction]],
    checkpoints: Sequence[float],
    seed: int = 0,
    threshold: float = Z_THRESHOLD,
    quadratic_variation: bool = False,
    threads: int = 1,
) -> list[MartingaleTestReport]:
    """Test ``F(<phi, xi_s>) - int_t^s L F_phi du`` for zero-mean increments, for all pairs on one ensemble.

    With ``quadratic_variation`` every pair whose ``F`` is the identity also
    yields a report on ``(Delta M)^2 - Delta <M>``, where ``<M>`` integrates
    the quadratic variation density of ``<phi, xi>``.
    Replications that hit the population cap are dropped and counted.
    """
    pairs = list(pairs)
    times, grid, keep = _checkpoint_grid(t, cfg, checkpoints)

    def collect(ens, obs):
        o = obs[0]
        if o.values is None:
            o._alloc(ens.R)
        return {"v": o.values, "a": o.comp, "q": o.qvs, "exploded": ens.exploded.copy()}

    out = run_replications(
        scn, pol, t, lam0, cfg, replication_seeds(seed, reps), collect,
        make_observers=lambda: [_Compensators(scn, pairs, keep, quadratic_variation)],
        grid=grid, threads=threads,
    )
    ok = ~out["exploded"]
    failed = int((~ok).sum())
    reports = []
    for j, (F, phi) in enumerate(pairs):
        M = out["v"][ok, j, :] - out["a"][ok, j, :]
        reports.append(_interval_reports(times, M, f"F={F.name},phi={phi.name}", failed, threshold, "martingale"))
    if quadratic_variation:
        for j, (F, phi) in enumerate(pairs):
            if F.name != "y":
                continue
            M = out["v"][ok, j, :] - out["a"][ok, j, :]
            Q = out["q"][ok, j, :]
            dM2 = np.diff(M, axis=1) ** 2 - np.diff(Q, axis=1)
            cum = np.concatenate([np.zeros((len(M), 1)), np.cumsum(dM2, axis=1)], axis=1)
            reports.append(_interval_reports(times, cum, f"qv:F={F.name},phi={phi.name}", failed, threshold, "martingale"))
    return reports


def martingale_test(scn, pol, t, lam0, cfg, reps, F, phi, checkpoints, seed=0, threshold=Z_THRESHOLD, threads=1):
    return martingale_tests(scn, pol, t, lam0, cfg, reps, [(F, phi)], checkpoints, seed, threshold, threads=threads)[0]


# --------------------------------------------------------------------------
# verification of candidate value fields


@dataclass(frozen=True)
class ValueField:
    """Candidate value ``w(t, lam)``.

    ``groups(t, positions, groups, n_groups)`` is an optional vectorised
    evaluation over many populations at once.
    """

    name: str
    at: Callable[[float, AtomicMeasure], float]
    groups: Callable[[float, np.ndarray, np.ndarray, int], np.ndarray] | None = None

    def __call__(self, t: float, lam: AtomicMeasure) -> float:
        return self.at(t, lam)

    def evaluate(self, t: float, view: MeasureView) -> np.ndarray:
        if self.groups is not None:
            return np.asarray(self.groups(t, view.positions, view.groups, view.n_groups), dtype=float)
        return np.array([self.at(t, view.measure(r)) for r in range(view.n_groups)])


ZERO_FIELD = ValueField("zero", lambda t, lam: 0.0, lambda t, x, g, n: np.zeros(n))


class _ValueSampler(Observer):
    def __init__(self, w: ValueField, keep: list[int], times: list[float]):
        self.w = w
        self.keep = {k: j for j, k in enumerate(keep)}
        self.times = times
        self.samples = None

    def on_grid(self, ens, k, t):
        if self.samples is None:
            self.samples = np.zeros((ens.R, len(self.keep)))
        if k in self.keep:
            c = self.keep[k]
            self.samples[:, c] = self.w.evaluate(self.times[c], ens.view()) + ens.running_cost


def submartingale_test(
    scn: Scenario,
    pol: Policy,
    t: float,
    lam0: AtomicMeasure,
    w: ValueField,
    cfg: SimConfig,
    reps: int,
    checkpoints: Sequence[float],
    seed: int = 0,
    mode: str = "submartingale",
    threshold: float = Z_THRESHOLD,
    threads: int = 1,
) -> MartingaleTestReport:
    """z-tests on increments of ``w_s(xi_s) + int_t^s sum psi du``.

    Submartingale mode passes when no interval has a significantly negative
    drift; martingale mode requires every interval to be consistent with zero.
    """
    if mode not in ("submartingale", "martingale"):
        raise ValueError(f"mode must be 'submartingale' or 'martingale', not {mode!r}")
    times, grid, keep = _checkpoint_grid(t, cfg, checkpoints)

    def collect(ens, obs):
        return {"s": obs[0].samples, "exploded": ens.exploded.copy()}

    out = run_replications(
        scn, pol, t, lam0, cfg, replication_seeds(seed, reps), collect,
        make_observers=lambda: [_ValueSampler(w, keep, times)],
        grid=grid, threads=threads,
    )
    ok = ~out["exploded"]
    return _interval_reports(times, out["s"][ok], f"w={w.name},policy={pol.name}", int((~ok).sum()), threshold, mode)


# --------------------------------------------------------------------------
# mass profile


def mass_profile(scn, pol, t, lam0, cfg, reps, checkpoints, seed=0, threads=1) -> list[tuple[float, EstimateResult]]:
    """Mean population size at each checkpoint."""
    times, grid, keep = _checkpoint_grid(t, cfg, checkpoints)

    class Sizes(Observer):
        def __init__(self):
            self.n = None

        def on_grid(self, ens, k, s):
            if self.n is None:
                self.n = np.zeros((ens.R, len(keep)))
            if k in keep:
                self.n[:, keep.index(k)] = ens.count

    out = run_replications(
        scn, pol, t, lam0, cfg, replication_seeds(seed, reps),
        lambda ens, obs: {"n": obs[0].n, "exploded": ens.exploded.copy()},
        make_observers=lambda: [Sizes()], grid=grid, threads=threads,
    )
    n = out["n"][~out["exploded"]]
    return [(s, EstimateResult(*mean_se(n[:, c]), reps, seed)) for c, s in enumerate(times)]
