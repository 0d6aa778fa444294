"""Experiment configuration files (TOML).

A config names a scenario, a policy, an initial population, simulation
settings, a replication count and a mandatory seed, plus per-command
options. :func:`load` returns an :class:`ExperimentConfig` whose ``resolved``
dict has every default filled in; artifacts embed that dict.
"""
from __future__ import annotations

import copy
import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from branchlab.measure import AtomicMeasure
from branchlab.policy import Constant, Policy, zero_policy
from branchlab.scenario import (
    Bounds,
    InvalidScenario,
    LQCoefficients,
    Scenario,
    Table,
    builtin_kinetic,
    builtin_lq,
    check_law,
    factorial_moments,
    matvec,
    quadratic_form,
)
from branchlab.simulate import SimConfig

WORKSPACE_ENV = "BRANCHLAB_WORKSPACE"


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending field path."""


DEFAULTS: dict[str, Any] = {
    "replications": 1000,
    "policy": {"name": "zero"},
    "initial": {"time": 0.0, "atoms": [[0.0]]},
    "simulation": {"horizon": 1.0, "dt_max": 1e-3, "output_grid": [], "max_population": 1_000_000},
    "martingale": {
        "checkpoints": [0.25, 0.5, 0.75],
        "pairs": [["y", "one"], ["y2", "one"], ["exp-neg", "one"], ["y", "bump"], ["y", "sigmoid"]],
        "threshold": 4.0,
        "quadratic_variation": True,
    },
    "verify": {"value_field": "zero", "mode": "submartingale", "checkpoints": [0.25, 0.5, 0.75], "threshold": 4.0},
    "compare": {"policies": ["zero", "zero"]},
    "riccati": {"steps": 2000},
    "kinetic_grid": {"x_min": -8.0, "x_max": 8.0, "n_x": 801, "n_t": 1000, "substeps": 16, "csv_stride": 10},
    "kinetic_probes": {"points": [-2.0, -1.0, 0.0, 1.0, 2.0], "samples": 100_000},
    "output": {},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


# --------------------------------------------------------------------------
# typed field access


def _get(d: dict, path: str, key: str, kind: Callable | tuple = float, default=...):
    where = f"{path}.{key}" if path else key
    if key not in d:
        if default is ...:
            raise ConfigError(f"{where}: required field is missing")
        return default
    v = d[key]
    try:
        if kind is float:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise TypeError
            return float(v)
        if kind is int:
            if isinstance(v, bool) or not isinstance(v, int):
                raise TypeError
            return int(v)
        if kind is str:
            if not isinstance(v, str):
                raise TypeError
            return v
        if kind is bool:
            if not isinstance(v, bool):
                raise TypeError
            return v
        return kind(v)
    except (TypeError, ValueError) as e:
        name = getattr(kind, "__name__", str(kind))
        raise ConfigError(f"{where}: expected {name}, got {v!r}") from e


def _table(value, where: str) -> Table:
    try:
        if isinstance(value, dict):
            if set(value) != {"times", "values"}:
                raise ConfigError(f"{where}: a table needs exactly the keys 'times' and 'values'")
            return Table(value["times"], value["values"])
        return Table.constant(value)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def _matrix_table(value, shape: tuple[int, ...], where: str) -> Table:
    tab = _table(value, where)
    size = int(np.prod(shape))
    if tab.values[0].size not in (size,) and not (tab.values[0].size == 1 and size == 1):
        raise ConfigError(f"{where}: expected shape {shape}, got {tab.shape}")
    return Table(tab.times, tab.values.reshape((len(tab.times),) + shape))


# --------------------------------------------------------------------------
# scenarios

BOUND_KEYS = {
    "C_b": "drift",
    "C_sigma": "volatility",
    "C_gamma": "rate",
    "C1_Phi": "first_moment",
    "C2_Phi": "second_moment",
    "C_Psi": "cost",
    "c_psi": "cost_coercivity",
}


def _with_overrides(scn: Scenario, sc: dict) -> Scenario:
    over = sc.get("bounds", {})
    if not isinstance(over, dict):
        raise ConfigError("scenario.bounds: expected a table")
    kw = {}
    for k, v in over.items():
        if k not in BOUND_KEYS:
            raise ConfigError(f"scenario.bounds.{k}: unknown bound; expected one of {sorted(BOUND_KEYS)}")
        kw[BOUND_KEYS[k]] = _get(over, "scenario.bounds", k)
    box = sc.get("action_box")
    action_box = scn.action_box
    if box is not None:
        lo = np.asarray(_get(box, "scenario.action_box", "low", list), dtype=float).reshape(-1)
        hi = np.asarray(_get(box, "scenario.action_box", "high", list), dtype=float).reshape(-1)
        if lo.shape != (scn.action_dim,) or hi.shape != (scn.action_dim,) or np.any(lo > hi):
            raise ConfigError("scenario.action_box: low/high must be q-vectors with low <= high")
        action_box = (lo, hi)
    if not kw and box is None:
        return scn
    return dataclasses.replace(scn, bounds=dataclasses.replace(scn.bounds, **kw), action_box=action_box)


def lq_coefficients(sc: dict, horizon: float) -> LQCoefficients:
    p = "scenario"
    try:
        return LQCoefficients.build(
            B=_table(sc.get("B", 0.0), f"{p}.B"),
            Bbar=_table(sc.get("Bbar", 1.0), f"{p}.Bbar"),
            sigma=_table(sc.get("sigma", 1.0), f"{p}.sigma"),
            gamma=_table(sc.get("gamma", 0.0), f"{p}.gamma"),
            probs=_get(sc, p, "probs", list, [0.0, 1.0]),
            C=_table(sc.get("C", 0.0), f"{p}.C"),
            c=_table(sc.get("c", 0.0), f"{p}.c"),
            Cbar=_table(sc.get("Cbar", 1.0), f"{p}.Cbar"),
            H=sc.get("H", 0.0),
            h=_get(sc, p, "h", float, 0.0),
            horizon=horizon,
        )
    except ConfigError:
        raise
    except (InvalidScenario, ValueError) as e:
        raise ConfigError(f"{p}: {e}") from e


def terminal_function(spec: str) -> Callable[[np.ndarray], np.ndarray]:
    """Named per-particle terminal functions ``G`` mapping points ``(n, d)`` to ``(n,)``.

    ``zero``, ``constant:c``, ``quadratic[:a]`` (``a |x|^2``), ``cosine[:a]``
    (``a cos(x_1)``), ``well[:a]`` (``a (1 - exp(-|x|^2 / 2))``).
    """
    kind, _, arg = spec.partition(":")
    a = float(arg) if arg else 1.0
    if kind == "zero":
        return lambda x: np.zeros(len(x))
    if kind == "constant":
        if not arg:
            raise ValueError("constant terminal needs a value, e.g. 'constant:1.5'")
        return lambda x: np.full(len(x), a)
    if kind == "quadratic":
        return lambda x: a * np.sum(x * x, axis=1)
    if kind == "cosine":
        return lambda x: a * np.cos(x[:, 0])
    if kind == "well":
        return lambda x: a * (1.0 - np.exp(-0.5 * np.sum(x * x, axis=1)))
    raise ValueError(f"unknown terminal function {spec!r}")


def _kinetic(sc: dict) -> Scenario:
    p = "scenario"
    dim = _get(sc, p, "dim", int, 1)
    drift = np.asarray(_get(sc, p, "drift", lambda v: np.asarray(v, dtype=float), 0.0), dtype=float).reshape(-1)
    if drift.size == 1:
        drift = np.full(dim, drift[0])
    if drift.shape != (dim,):
        raise ConfigError(f"{p}.drift: expected {dim} components")
    slope = _get(sc, p, "drift_slope", float, 0.0)
    rate = _get(sc, p, "rate", float, 0.0)
    probs = np.asarray(_get(sc, p, "probs", list, [0.0, 1.0]), dtype=float)
    try:
        check_law(probs)
        G = terminal_function(_get(sc, p, "terminal", str, "zero"))
    except (InvalidScenario, ValueError) as e:
        raise ConfigError(f"{p}: {e}") from e
    if rate < 0:
        raise ConfigError(f"{p}.rate: must be non-negative")

    def b(t, x):
        return drift[None, :] + slope * x

    return builtin_kinetic(
        drift=b,
        rate=rate,
        probs=tuple(probs),
        terminal=G,
        dim=dim,
        drift_bound=float(np.max(np.abs(drift), initial=0.0) + abs(slope)),
    )


def _tabular(sc: dict) -> Scenario:
    """State-independent coefficient tables.

    Drift ``b_t + A_t x + Bbar_t a``, volatility ``S_t``, rate ``gamma_t``,
    law ``probs_t``; running cost ``x^T C_t x + a^T Cbar_t a + c_t`` and
    terminal cost ``int x^T H x dlam + h <1, lam>``.
    """
    p = "scenario"
    d = _get(sc, p, "dim", int, 1)
    dp = _get(sc, p, "noise_dim", int, d)
    q = _get(sc, p, "action_dim", int, 1)
    b0 = _matrix_table(sc.get("drift", np.zeros(d).tolist()), (d,), f"{p}.drift")
    A = _matrix_table(sc.get("A", np.zeros((d, d)).tolist()), (d, d), f"{p}.A")
    Bb = _matrix_table(sc.get("Bbar", np.zeros((d, q)).tolist()), (d, q), f"{p}.Bbar")
    S = _matrix_table(sc.get("sigma", np.eye(d, dp).tolist()), (d, dp), f"{p}.sigma")
    gam = _table(sc.get("gamma", 0.0), f"{p}.gamma")
    law = _table(sc.get("probs", [0.0, 1.0]), f"{p}.probs")
    C = _matrix_table(sc.get("C", np.zeros((d, d)).tolist()), (d, d), f"{p}.C")
    Cb = _matrix_table(sc.get("Cbar", np.zeros((q, q)).tolist()), (q, q), f"{p}.Cbar")
    c = _table(sc.get("c", 0.0), f"{p}.c")
    H = np.asarray(sc.get("H", np.zeros((d, d)).tolist()), dtype=float).reshape(d, d)
    h = _get(sc, p, "h", float, 0.0)
    if float(gam.values.min()) < 0:
        raise ConfigError(f"{p}.gamma: must be non-negative")
    try:
        for v in law.values:
            check_law(v)
    except InvalidScenario as e:
        raise ConfigError(f"{p}.probs: {e}") from e
    K = law.shape[0]

    def drift(t, x, lam, a):
        return b0(t) + matvec(A(t), x) + matvec(Bb(t), a)

    def vol(t, x, lam, a):
        return S(t)

    def rate(t, x, lam, a):
        return np.array(gam(t), dtype=float)

    def probs(t, x, lam, a):
        return law(t).reshape(len(x), K)

    def psi(t, x, lam, a):
        return quadratic_form(C(t), x) + quadratic_form(Cb(t), a) + c(t)

    def Psi(lam: AtomicMeasure) -> float:
        if lam.mass == 0:
            return 0.0
        return float(np.sum(quadratic_form(H, lam.unit_atoms()))) + h * lam.mass

    def Psi_groups(positions, groups, n_groups):
        mass = np.bincount(groups, minlength=n_groups).astype(float)
        if len(positions) == 0:
            return h * mass
        return np.bincount(groups, weights=quadratic_form(H, positions), minlength=n_groups) + h * mass

    op = lambda m: float(np.linalg.norm(m.reshape(m.shape[0], -1), 2)) if m.ndim == 2 else float(np.abs(m).max())
    m1 = max(float(factorial_moments(v)[0]) for v in law.values)
    m2 = max(float(factorial_moments(v)[1]) for v in law.values)
    cb_min = min(float(np.linalg.eigvalsh(v).min()) for v in Cb.values) if q else 0.0
    bounds = Bounds(
        drift=max(b0.sup_norm(), A.sup_norm(op), Bb.sup_norm(op)),
        volatility=S.sup_norm(op),
        rate=gam.sup_norm(),
        first_moment=m1,
        second_moment=m2,
        cost=max(C.sup_norm(op), Cb.sup_norm(op), c.sup_norm(), float(np.abs(H).max()), abs(h), 1.0),
        cost_coercivity=max(cb_min, 0.0),
    )
    convex = cb_min >= 0
    return Scenario(
        drift=drift,
        volatility=vol,
        branch_rate=rate,
        offspring_probs=probs,
        running_cost=psi,
        terminal_cost=Psi,
        bounds=bounds,
        dim=d,
        noise_dim=dp,
        action_dim=q,
        kind="custom-tabular",
        filippov=convex,
        filippov_note="drift affine in a, branching independent of a, running cost convex in a"
        if convex
        else "running cost is not convex in a",
        details={"terminal_cost_groups": Psi_groups},
    )


def build_scenario(sc: dict, horizon: float) -> Scenario:
    if not isinstance(sc, dict):
        raise ConfigError("scenario: expected a table")
    kind = _get(sc, "scenario", "kind", str)
    try:
        if kind == "lq":
            scn = builtin_lq(lq_coefficients(sc, horizon))
        elif kind == "kinetic":
            scn = _kinetic(sc)
        elif kind == "custom-tabular":
            scn = _tabular(sc)
        else:
            raise ConfigError(f"scenario.kind: unknown kind {kind!r}; expected lq, kinetic or custom-tabular")
    except InvalidScenario as e:
        raise ConfigError(f"scenario: {e}") from e
    return _with_overrides(scn, sc)


# --------------------------------------------------------------------------
# the experiment


@dataclass
class ExperimentConfig:
    resolved: dict
    scenario: Scenario
    t0: float
    initial: AtomicMeasure
    sim: SimConfig
    replications: int
    seed: int
    root: Path
    _solutions: dict = field(default_factory=dict)

    # -- closed-form solutions, solved on demand --------------------------------

    def riccati(self):
        from branchlab.lq import solve_riccati

        if "lq" not in self.scenario.details:
            raise ConfigError("scenario.kind: the LQ solution needs an lq scenario")
        if "riccati" not in self._solutions:
            steps = _get(self.resolved["riccati"], "riccati", "steps", int)
            self._solutions["riccati"] = solve_riccati(self.scenario.details["lq"], steps)
        return self._solutions["riccati"]

    def kinetic_grid(self):
        from branchlab.kinetic import KineticGrid

        g = self.resolved["kinetic_grid"]
        try:
            return KineticGrid(
                horizon=self.sim.horizon,
                x_min=_get(g, "kinetic_grid", "x_min"),
                x_max=_get(g, "kinetic_grid", "x_max"),
                n_x=_get(g, "kinetic_grid", "n_x", int),
                n_t=_get(g, "kinetic_grid", "n_t", int),
                substeps=_get(g, "kinetic_grid", "substeps", int),
            )
        except ValueError as e:
            raise ConfigError(f"kinetic_grid: {e}") from e

    def kinetic(self):
        from branchlab.kinetic import solve_kinetic_hjb

        if "kinetic" not in self.scenario.details or self.scenario.dim != 1:
            raise ConfigError("scenario.kind: the kinetic solution needs a one-dimensional kinetic scenario")
        if "kinetic" not in self._solutions:
            self._solutions["kinetic"] = solve_kinetic_hjb(self.scenario, self.kinetic_grid())
        return self._solutions["kinetic"]

    # -- named objects ------------------------------------------------------------

    def policy(self, name: str | None = None, where: str = "policy.name") -> Policy:
        name = self.resolved["policy"]["name"] if name is None else name
        kind, _, arg = name.partition(":")
        q = self.scenario.action_dim
        try:
            if kind == "zero":
                return zero_policy(q)
            if kind == "constant":
                vals = [float(v) for v in arg.split(",")]
                if len(vals) == 1:
                    vals = vals * q
                if len(vals) != q:
                    raise ConfigError(f"{where}: constant action needs {q} components")
                return Constant(vals)
            if kind == "lq-optimal":
                from branchlab.lq import lq_feedback

                return lq_feedback(self.riccati())
            if kind == "lq-perturbed":
                from branchlab.lq import lq_perturbed

                return lq_perturbed(self.riccati(), float(arg))
            if kind == "kinetic-optimal":
                from branchlab.kinetic import kinetic_feedback

                return kinetic_feedback(self.kinetic())
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"{where}: {e}") from e
        raise ConfigError(f"{where}: unknown policy {name!r}")

    def value_field(self, name: str):
        from branchlab.estimate import ZERO_FIELD

        if name == "zero":
            return ZERO_FIELD
        if name == "lq":
            from branchlab.lq import lq_value_field

            return lq_value_field(self.riccati())
        if name == "kinetic":
            from branchlab.kinetic import kinetic_value_field

            return kinetic_value_field(self.kinetic())
        raise ConfigError(f"verify.value_field: unknown value field {name!r}; expected zero, lq or kinetic")

    def output_path(self, key: str, override: str | None = None) -> Path | None:
        rel = override if override is not None else self.resolved["output"].get(key)
        if rel is None:
            return None
        p = Path(rel)
        if p.is_absolute():
            raise ConfigError(f"output.{key}: paths must be relative to the workspace root")
        return self.root / p


def workspace_root(flag: str | None = None) -> Path:
    if flag:
        return Path(flag)
    env = os.environ.get(WORKSPACE_ENV)
    return Path(env) if env else Path.cwd()


def _initial(init: dict, dim: int) -> tuple[float, AtomicMeasure]:
    t0 = _get(init, "initial", "time", float)
    atoms = _get(init, "initial", "atoms", list)
    try:
        if atoms and isinstance(atoms[0], dict):
            lam = AtomicMeasure.from_json(atoms, dimension=dim)
        elif not atoms:
            lam = AtomicMeasure.zero(dim)
        else:
            lam = AtomicMeasure.from_atoms(np.asarray(atoms, dtype=float).reshape(len(atoms), -1), dimension=dim)
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"initial.atoms: {e}") from e
    return t0, lam


def from_dict(raw: dict, root: Path | None = None) -> ExperimentConfig:
    if "seed" not in raw:
        raise ConfigError("seed: required field is missing (there is no wall-clock seeding)")
    known = set(DEFAULTS) | {"seed", "scenario"}
    for k in raw:
        if k not in known:
            raise ConfigError(f"{k}: unknown section")
    cfg = _merge(DEFAULTS, raw)
    seed = _get(cfg, "", "seed", int)
    if seed < 0:
        raise ConfigError("seed: must be non-negative")
    reps = _get(cfg, "", "replications", int)
    if reps < 2:
        raise ConfigError("replications: need at least 2")
    s = cfg["simulation"]
    try:
        sim = SimConfig(
            horizon=_get(s, "simulation", "horizon"),
            dt_max=_get(s, "simulation", "dt_max"),
            output_grid=tuple(float(v) for v in _get(s, "simulation", "output_grid", list)),
            max_population=_get(s, "simulation", "max_population", int),
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"simulation: {e}") from e
    if "scenario" not in cfg:
        raise ConfigError("scenario: required section is missing")
    scn = build_scenario(cfg["scenario"], sim.horizon)
    t0, lam = _initial(cfg["initial"], scn.dim)
    if t0 > sim.horizon:
        raise ConfigError("initial.time: after simulation.horizon")
    return ExperimentConfig(cfg, scn, t0, lam, sim, reps, seed, root or workspace_root())


def load(path: str | Path, root: Path | None = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config: {e}") from e
    return from_dict(raw, root)
