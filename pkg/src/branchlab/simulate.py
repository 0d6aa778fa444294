"""Event-driven simulation of controlled branching diffusions.

Candidate branching events arrive at rate ``C_gamma * |V|`` (one clock for
the whole population, the triggering particle drawn uniformly in label
order). Between events every particle follows an explicit Euler-Maruyama
step whose coefficients, actions and empirical measure are frozen at the
start of the step. At a candidate event the triggering particle draws a
uniform mark ``z`` in ``[0, C_gamma]``; the event is thinned when
``z >= gamma`` and otherwise the particle is replaced by ``k`` children at
its position, ``k`` given by the offspring interval containing ``z``.

Many replications are advanced together: each one keeps its own clock and
event times, and every random number is drawn from a counter-based stream
keyed by the replication seed and the particle label. A replication's
trajectory is therefore the same whichever batch it runs in.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from branchlab import streams
from branchlab.genealogy import Label
from branchlab.measure import AtomicMeasure
from branchlab.policy import Policy, RandomizedFeedback, evaluate
from branchlab.scenario import InvalidScenario, MeasureView, Scenario, check_law, matvec, offspring_index

RATE_TOL = 1e-9


class SimulationError(RuntimeError):
    pass


class ExplosionError(SimulationError):
    def __init__(self, message: str, partial=None, failed: int = 1):
        super().__init__(message)
        self.partial = partial
        self.failed = failed


class NumericalError(SimulationError):
    pass


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    dt_max: float = 1e-2
    output_grid: tuple[float, ...] = ()
    max_population: int = 1_000_000
    check_admissibility: bool = False

    def __post_init__(self):
        if not self.dt_max > 0:
            raise ValueError("dt_max must be positive")
        if self.max_population < 1:
            raise ValueError("max_population must be positive")
        grid = tuple(float(s) for s in self.output_grid)
        if list(grid) != sorted(grid):
            raise ValueError("output grid must be sorted")
        object.__setattr__(self, "output_grid", grid)

    def to_json(self) -> dict:
        return {
            "horizon": self.horizon,
            "dt_max": self.dt_max,
            "output_grid": list(self.output_grid),
            "max_population": self.max_population,
            "check_admissibility": self.check_admissibility,
        }


def time_grid(t0: float, cfg: SimConfig, extra: Iterable[float] = ()) -> np.ndarray:
    """Step boundaries: a uniform grid of mesh <= dt_max, plus any requested times."""
    T = float(cfg.horizon)
    if T < t0:
        raise ValueError(f"start time {t0} is after the horizon {T}")
    extra = [float(s) for s in extra] + list(cfg.output_grid)
    for s in extra:
        if s < t0 - 1e-12 or s > T + 1e-12:
            raise ValueError(f"requested time {s} outside [{t0}, {T}]")
    if T == t0:
        return np.array([t0])
    n = max(1, math.ceil((T - t0) / cfg.dt_max - 1e-9))
    base = t0 + (T - t0) * np.arange(n + 1) / n
    base[-1] = T
    snap = 1e-9 * max(1.0, abs(T))
    pts = list(base)
    for s in extra:
        if np.min(np.abs(base - s)) > snap:
            pts.append(s)
    return np.array(sorted(pts))


def snap_times(grid: np.ndarray, times: Iterable[float]) -> list[int]:
    """Grid indices of the requested times."""
    out = []
    for s in times:
        k = int(np.argmin(np.abs(grid - s)))
        if abs(grid[k] - s) > 1e-9 * max(1.0, abs(grid[-1])):
            raise ValueError(f"time {s} is not on the simulation grid")
        out.append(k)
    return out


# --------------------------------------------------------------------------
# records


@dataclass
class PopulationState:
    time: float
    particles: dict[Label, np.ndarray]

    def measure(self, dim: int) -> AtomicMeasure:
        if not self.particles:
            return AtomicMeasure.zero(dim)
        return AtomicMeasure.from_atoms(np.vstack(list(self.particles.values())), dimension=dim)

    @property
    def size(self) -> int:
        return len(self.particles)

    def to_json(self) -> dict:
        return {
            "time": self.time,
            "particles": [
                {"label": str(lab), "position": [float(v) for v in pos]}
                for lab, pos in sorted(self.particles.items(), key=lambda kv: kv[0].path)
            ],
        }


@dataclass(frozen=True)
class Event:
    time: float
    parent: Label
    offspring: int  # -1 when thinned
    children: tuple[Label, ...] = ()

    @property
    def outcome(self) -> str:
        return "thinned" if self.offspring < 0 else f"offspring({self.offspring})"

    def to_json(self) -> dict:
        return {
            "time": self.time,
            "parent": str(self.parent),
            "outcome": self.outcome,
            "offspring": [str(c) for c in self.children],
        }


@dataclass
class PathRecord:
    start_time: float
    initial: AtomicMeasure
    states: list[PopulationState]
    events: list[Event]
    running_cost: float
    terminal_cost: float
    terminal: PopulationState
    seed: int
    dt_max: float
    complete: bool = True

    @property
    def cost(self) -> float:
        return self.running_cost + self.terminal_cost

    def to_json(self) -> dict:
        return {
            "start_time": self.start_time,
            "initial": self.initial.to_json(),
            "seed": self.seed,
            "dt_max": self.dt_max,
            "complete": self.complete,
            "states": [s.to_json() for s in self.states],
            "events": [e.to_json() for e in self.events],
            "running_cost": self.running_cost,
            "terminal_cost": self.terminal_cost,
            "terminal": self.terminal.to_json(),
        }

    def states_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.initial.dimension
        w.writerow(["time", "label"] + [f"x{j}" for j in range(d)])
        for s in self.states:
            for lab, pos in sorted(s.particles.items(), key=lambda kv: kv[0].path):
                w.writerow([f"{s.time:.17g}", str(lab)] + [f"{v:.17g}" for v in pos])
        return buf.getvalue()


# --------------------------------------------------------------------------
# per-step randomness


class StepDraws:
    """Uniforms for randomized policies: particle keys at a per-particle counter base."""

    def __init__(self, keys: np.ndarray, base: np.ndarray):
        self.keys = keys
        self.base = base

    def uniform(self, j: int) -> np.ndarray:
        if j >= streams.ACTION_BLOCK - 1:
            raise ValueError(f"at most {streams.ACTION_BLOCK - 1} draws per step")
        return streams.uniform(self.keys, self.base + np.uint64(j))


def brownian_increments(keys: np.ndarray, step: np.ndarray, noise_dim: int) -> np.ndarray:
    """Standard normals ``(n, noise_dim)`` for the given per-particle substep counters."""
    step = np.asarray(step, dtype=np.uint64)
    z = np.empty((len(keys), noise_dim))
    for j in range(noise_dim):
        z[:, j] = streams.normal(keys, step * np.uint64(noise_dim) + np.uint64(j))
    return z


@dataclass
class StepContext:
    """Everything frozen at the start of one Euler substep (handed to observers)."""

    t: np.ndarray
    h: np.ndarray
    x: np.ndarray
    a: np.ndarray
    groups: np.ndarray
    view: MeasureView
    drift: np.ndarray
    vol: np.ndarray
    n_groups: int


def euler_kernel(scn: Scenario, pol: Policy, t, x, view: MeasureView, h, bkeys, akeys, step, check: bool = False):
    """One explicit Euler-Maruyama substep for a set of particles.

    Returns ``(new_x, ctx, psi)``.
    """
    n = len(x)
    step = np.asarray(step, dtype=np.uint64)
    draws = StepDraws(akeys, step * np.uint64(streams.ACTION_BLOCK)) if isinstance(pol, RandomizedFeedback) else None
    a = evaluate(pol, t, x, view, draws, scn)
    if check:
        assert_admissible(x, view.query_groups, a)
    b = np.asarray(scn.drift(t, x, view, a), dtype=float).reshape(n, scn.dim)
    s = np.asarray(scn.volatility(t, x, view, a), dtype=float).reshape(n, scn.dim, scn.noise_dim)
    psi = np.asarray(scn.running_cost(t, x, view, a), dtype=float).reshape(n)
    z = brownian_increments(bkeys, step, scn.noise_dim)
    new_x = x + b * h[:, None] + matvec(s, z) * np.sqrt(h)[:, None]
    ctx = StepContext(t, h, x, a, view.query_groups, view, b, s, view.n_groups)
    return new_x, ctx, psi


def assert_admissible(x: np.ndarray, groups: np.ndarray, a: np.ndarray) -> None:
    """Particles of one population at the same position must receive the same action."""
    if len(x) < 2:
        return
    order = np.lexsort(tuple(x.T[::-1]) + (groups,))
    xs, gs, as_ = x[order], groups[order], a[order]
    same = (gs[1:] == gs[:-1]) & np.all(xs[1:] == xs[:-1], axis=1)
    if np.any(same & np.any(as_[1:] != as_[:-1], axis=1)):
        raise AssertionError("particles at identical positions received different actions")


def euler_step(scn: Scenario, pol: Policy, state: PopulationState, h: float, seed: int, step: int = 0) -> PopulationState:
    """Advance a single population by one Euler substep of length ``h``.

    The Brownian draw of particle ``i`` is counter ``step`` of the stream
    ``label_stream(seed, i, "brownian")``.
    """
    if not h > 0:
        raise ValueError("step must be positive")
    if not state.particles:
        return PopulationState(state.time + h, {})
    labels = list(state.particles)
    x = np.vstack([state.particles[lab] for lab in labels]).astype(float)
    n = len(x)
    lh = np.array([streams.label_hash(lab.path) for lab in labels], dtype=np.uint64)
    s64 = np.full(n, seed % (1 << 64), dtype=np.uint64)
    view = MeasureView(x, np.zeros(n, dtype=np.int64), 1)
    new_x, _, _ = euler_kernel(
        scn,
        pol,
        np.full(n, state.time),
        x,
        view,
        np.full(n, float(h)),
        streams.stream_key(s64, lh, "brownian"),
        streams.stream_key(s64, lh, "action"),
        np.full(n, step),
    )
    if not np.all(np.isfinite(new_x)):
        raise NumericalError("non-finite position after Euler step")
    return PopulationState(state.time + h, {lab: new_x[i] for i, lab in enumerate(labels)})


# --------------------------------------------------------------------------
# batch engine


class Observer:
    """Hooks called by :class:`Ensemble`; subclasses override what they need."""

    def on_substep(self, ens: "Ensemble", ctx: StepContext) -> None:
        pass

    def on_grid(self, ens: "Ensemble", k: int, t: float) -> None:
        pass

    def on_event(self, ens: "Ensemble", r: int, event: Event) -> None:
        pass


def initial_labels(m: int) -> list[tuple[int, ...]]:
    """Labels of the founding particles: ``0, 1, ..., m-1``."""
    return [(i,) for i in range(m)]


class Ensemble:
    """A batch of independent replications of the controlled population.

    Particle arrays are kept sorted by (replication, label), so each
    replication occupies a contiguous block in label order. Children
    replace their parent in place, which preserves that order.
    """

    def __init__(
        self,
        scn: Scenario,
        pol: Policy,
        t0: float,
        lam0: AtomicMeasure,
        cfg: SimConfig,
        seeds: np.ndarray,
        track_labels: bool = False,
    ):
        if lam0.dimension != scn.dim:
            raise ValueError(f"initial measure lives on R^{lam0.dimension}, scenario on R^{scn.dim}")
        self.scn, self.pol, self.cfg = scn, pol, cfg
        self.t0 = float(t0)
        self.seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1)
        R = self.R = len(self.seeds)
        pts = lam0.unit_atoms()
        m = len(pts)
        founders = initial_labels(m)
        fh = np.array([streams.label_hash(p) for p in founders], dtype=np.uint64)

        self.X = np.tile(pts, (R, 1)).astype(float).reshape(R * m, scn.dim)
        self.rep = np.repeat(np.arange(R, dtype=np.int64), m)
        self.lhash = np.tile(fh, R)
        self.mcount = np.zeros(R * m, dtype=np.uint64)
        self.paths: list[tuple[int, ...]] | None = founders * R if track_labels else None
        s = self.seeds[self.rep]
        self.bkey = streams.stream_key(s, self.lhash, "brownian")
        self.mkey = streams.stream_key(s, self.lhash, "mark")
        self.akey = streams.stream_key(s, self.lhash, "action")

        self.clock_key = streams.stream_key(self.seeds, np.zeros(R, dtype=np.uint64), "clock")
        self.now = np.full(R, self.t0)
        self.n_clock = np.zeros(R, dtype=np.uint64)
        self.n_steps = np.zeros(R, dtype=np.uint64)
        self.count = np.full(R, m, dtype=np.int64)
        self.max_count = self.count.copy()
        self.n_events = np.zeros(R, dtype=np.int64)
        self.running_cost = np.zeros(R)
        self.exploded = np.zeros(R, dtype=bool)
        self.tau = np.full(R, np.inf)
        self._draw_clock(np.arange(R))

    def _draw_clock(self, reps: np.ndarray) -> None:
        if len(reps) == 0:
            return
        rate = self.scn.bounds.rate * self.count[reps]
        u = streams.uniform(self.clock_key[reps], np.uint64(2) * self.n_clock[reps])
        with np.errstate(divide="ignore"):
            wait = np.where(rate > 0, -np.log(u) / np.where(rate > 0, rate, 1.0), np.inf)
        self.tau[reps] = self.now[reps] + wait

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.count)])

    # -- views -----------------------------------------------------------------

    def view(self) -> MeasureView:
        return MeasureView(self.X, self.rep, self.R)

    def population(self, r: int) -> PopulationState:
        if self.paths is None:
            raise RuntimeError("labels are only tracked when track_labels=True")
        lo, hi = self.starts[r], self.starts[r + 1]
        return PopulationState(
            float(self.now[r]), {Label(self.paths[s]): self.X[s].copy() for s in range(lo, hi)}
        )

    def terminal_costs(self) -> np.ndarray:
        fast = self.scn.details.get("terminal_cost_groups")
        if fast is not None:
            out = np.asarray(fast(self.X, self.rep, self.R), dtype=float)
        else:
            v = self.view()
            out = np.array([self.scn.terminal_cost(v.measure(r)) for r in range(self.R)])
        return np.where(self.exploded, np.nan, out)

    # -- dynamics --------------------------------------------------------------

    def _substep(self, active: np.ndarray, h_rep: np.ndarray, observers) -> None:
        sel = slice(None) if active.all() else np.flatnonzero(active[self.rep])
        x = self.X[sel]
        if len(x) == 0:
            return
        rp = self.rep[sel]
        view = MeasureView(x, rp, self.R)
        new_x, ctx, psi = euler_kernel(
            self.scn,
            self.pol,
            self.now[rp],
            x,
            view,
            h_rep[rp],
            self.bkey[sel],
            self.akey[sel],
            self.n_steps[rp],
            self.cfg.check_admissibility,
        )
        self.running_cost += np.bincount(rp, weights=psi * ctx.h, minlength=self.R)
        for ob in observers:
            ob.on_substep(self, ctx)
        if not np.all(np.isfinite(new_x)):
            bad = np.unique(rp[~np.all(np.isfinite(new_x), axis=1)])
            raise NumericalError(f"non-finite particle position in replication(s) {bad.tolist()}")
        self.X[sel] = new_x

    def _branch(self, reps: np.ndarray, observers) -> None:
        """Resolve the pending candidate event of every replication in ``reps``."""
        scn = self.scn
        c_gamma = scn.bounds.rate
        u = streams.uniform(self.clock_key[reps], np.uint64(2) * self.n_clock[reps] + np.uint64(1))
        self.n_clock[reps] += np.uint64(1)
        pick = np.minimum((u * self.count[reps]).astype(np.int64), self.count[reps] - 1)
        slot = self.starts[reps] + pick

        t = self.tau[reps]
        xi = self.X[slot]
        view = MeasureView(self.X, self.rep, self.R, reps)
        block = self.mcount[slot] * np.uint64(streams.MARK_BLOCK)
        draws = StepDraws(self.mkey[slot], block + np.uint64(1))
        a = evaluate(self.pol, t, xi, view, draws, scn)
        rate = np.broadcast_to(np.asarray(scn.branch_rate(t, xi, view, a), dtype=float).reshape(-1), (len(reps),))
        if np.any(rate < 0) or np.any(rate > c_gamma * (1 + RATE_TOL) + RATE_TOL):
            raise InvalidScenario(f"branching rate outside [0, C_gamma={c_gamma}]: {rate.max()}")
        probs = np.asarray(scn.offspring_probs(t, xi, view, a), dtype=float).reshape(len(reps), -1)
        check_law(probs)
        z = streams.uniform(self.mkey[slot], block) * c_gamma
        self.mcount[slot] += np.uint64(1)
        k = offspring_index(rate, probs, z)

        born = k >= 0
        if observers:
            for j in range(len(reps)):
                parent = Label(self.paths[slot[j]]) if self.paths is not None else None
                kids = tuple(Label(parent.path + (i,)) for i in range(max(k[j], 0))) if parent is not None else ()
                ev = Event(float(t[j]), parent, int(k[j]), kids)
                for ob in observers:
                    ob.on_event(self, int(reps[j]), ev)
        if born.any():
            self._replace(slot[born], k[born])
            br = reps[born]
            self.count[br] += k[born] - 1
            self.max_count[br] = np.maximum(self.max_count[br], self.count[br])
            self.n_events[br] += 1
        over = reps[self.count[reps] > self.cfg.max_population]
        if len(over):
            self.exploded[over] = True
            self._drop(over)
        self._draw_clock(reps)

    def _replace(self, parents: np.ndarray, k: np.ndarray) -> None:
        """Replace each parent slot by ``k`` children at the parent's position."""
        reps = np.ones(len(self.X), dtype=np.int64)
        reps[parents] = k
        src = np.repeat(np.arange(len(self.X)), reps)
        # offspring index of each new slot within its family (0 for untouched slots)
        first = np.concatenate([[0], np.cumsum(reps)[:-1]])
        child_idx = np.arange(len(src)) - np.repeat(first, reps)
        is_child = np.repeat(np.isin(np.arange(len(self.X)), parents), reps)

        self.X = self.X[src]
        self.rep = self.rep[src]
        lh = self.lhash[src]
        ch = streams.child_hash(lh[is_child], child_idx[is_child])
        lh[is_child] = ch
        self.lhash = lh
        self.mcount = np.where(is_child, np.uint64(0), self.mcount[src])
        s = self.seeds[self.rep[is_child]]
        for name, kind in (("bkey", "brownian"), ("mkey", "mark"), ("akey", "action")):
            keys = getattr(self, name)[src]
            keys[is_child] = streams.stream_key(s, ch, kind)
            setattr(self, name, keys)
        if self.paths is not None:
            paths = [self.paths[i] for i in src]
            for j in np.flatnonzero(is_child):
                paths[j] = paths[j] + (int(child_idx[j]),)
            self.paths = paths

    def _drop(self, reps: np.ndarray) -> None:
        keep = ~np.isin(self.rep, reps)
        for name in ("X", "rep", "lhash", "mcount", "bkey", "mkey", "akey"):
            setattr(self, name, getattr(self, name)[keep])
        if self.paths is not None:
            self.paths = [p for p, k in zip(self.paths, keep) if k]
        self.count[reps] = 0
        self.tau[reps] = np.inf
        self.now[reps] = self.cfg.horizon

    def run(self, observers: Sequence[Observer] = (), grid: np.ndarray | None = None):
        grid = time_grid(self.t0, self.cfg) if grid is None else grid
        for ob in observers:
            ob.on_grid(self, 0, float(grid[0]))
        for k in range(1, len(grid)):
            t_next = float(grid[k])
            while True:
                active = (self.now < t_next) & ~self.exploded
                if not active.any():
                    break
                end = np.where(active, np.minimum(self.tau, t_next), self.now)
                self._substep(active, end - self.now, observers)
                self.n_steps[active] += np.uint64(1)
                self.now = end
                fire = np.flatnonzero(active & (self.tau <= t_next))
                if len(fire):
                    self._branch(fire, observers)
            self.now[~self.exploded] = t_next
            for ob in observers:
                ob.on_grid(self, k, t_next)
        return self


class _PathRecorder(Observer):
    def __init__(self, keep: set[int]):
        self.keep = keep
        self.states: list[PopulationState] = []
        self.events: list[Event] = []

    def on_grid(self, ens, k, t):
        if k in self.keep:
            self.states.append(ens.population(0))

    def on_event(self, ens, r, event):
        self.events.append(event)


def simulate_path(
    scn: Scenario, pol: Policy, t: float, lam0: AtomicMeasure, cfg: SimConfig, seed: int
) -> PathRecord:
    """Simulate one trajectory and return its full event log and grid states.

    ``seed`` is the path's master seed; the same seed used as replication
    seed inside an ensemble reproduces this path exactly.
    """
    grid = time_grid(t, cfg)
    keep = set(snap_times(grid, cfg.output_grid))
    rec = _PathRecorder(keep)
    ens = Ensemble(scn, pol, t, lam0, cfg, np.array([seed % (1 << 64)], dtype=np.uint64), track_labels=True)
    ens.run([rec], grid)
    if ens.exploded[0]:
        partial = PathRecord(
            t, lam0, rec.states, rec.events, float(ens.running_cost[0]), math.nan,
            PopulationState(float(ens.now[0]), {}), seed, cfg.dt_max, complete=False,
        )
        raise ExplosionError(f"population exceeded {cfg.max_population} particles", partial)
    terminal = ens.population(0)
    return PathRecord(
        start_time=t,
        initial=lam0,
        states=rec.states,
        events=rec.events,
        running_cost=float(ens.running_cost[0]),
        terminal_cost=float(ens.terminal_costs()[0]),
        terminal=terminal,
        seed=seed,
        dt_max=cfg.dt_max,
    )
