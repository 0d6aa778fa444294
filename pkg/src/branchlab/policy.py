"""Control laws acting on particles.

Policies are evaluated for a whole set of particles at once:
``evaluate(pol, t, x, lam, draws)`` with ``t`` of shape ``(n,)``, ``x`` of
shape ``(n, d)`` and ``lam`` a :class:`~branchlab.scenario.MeasureView`.
``draws`` supplies per-particle randomness for randomized policies.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from branchlab.scenario import MeasureView, Scenario


class ActionDomainError(ValueError):
    pass


class Draws(Protocol):
    """Per-particle uniforms: ``uniform(j)`` returns the j-th draw for every particle."""

    def uniform(self, j: int) -> np.ndarray: ...


class ArrayDraws:
    """Draws backed by a fixed ``(n, k)`` array of uniforms (mostly for tests)."""

    def __init__(self, u: np.ndarray):
        self.u = np.atleast_2d(u)

    def uniform(self, j: int) -> np.ndarray:
        return self.u[:, j]


@dataclass(frozen=True)
class Constant:
    action: np.ndarray

    def __init__(self, action):
        object.__setattr__(self, "action", np.atleast_1d(np.asarray(action, dtype=float)))

    @property
    def name(self) -> str:
        return "constant:" + ",".join(repr(float(v)) for v in self.action)


@dataclass(frozen=True)
class Feedback:
    """Deterministic Markov control ``a = rule(t, x, lam)``."""

    rule: Callable[[np.ndarray, np.ndarray, MeasureView], np.ndarray]
    name: str = "feedback"


@dataclass(frozen=True)
class RandomizedFeedback:
    """Relaxed control realised by sampling: ``sampler(t, x, lam, draws) -> actions``."""

    sampler: Callable[[np.ndarray, np.ndarray, MeasureView, Draws], np.ndarray]
    name: str = "randomized"


Policy = Constant | Feedback | RandomizedFeedback


def zero_policy(q: int) -> Constant:
    return Constant(np.zeros(q))


def mixture(actions: Sequence[Sequence[float]], weights: Sequence[float], name: str = "mixture") -> RandomizedFeedback:
    """State-independent randomized policy putting ``weights[k]`` on ``actions[k]``."""
    acts = np.atleast_2d(np.asarray(actions, dtype=float))
    cdf = np.cumsum(np.asarray(weights, dtype=float))
    if abs(cdf[-1] - 1.0) > 1e-12:
        raise ValueError("mixture weights must sum to one")

    def sampler(t, x, lam, draws):
        k = np.searchsorted(cdf, draws.uniform(0), side="left")
        return acts[np.minimum(k, len(acts) - 1)]

    return RandomizedFeedback(sampler, name)


def point_mass(rule: Callable, name: str = "point-mass") -> RandomizedFeedback:
    """Randomized policy that ignores its draws and always plays ``rule``."""
    return RandomizedFeedback(lambda t, x, lam, draws: rule(t, x, lam), name)


def perturbed(base: Feedback, eps: float, direction: Sequence[float], name: str | None = None) -> Feedback:
    """``base`` plus ``eps`` times a fixed action direction."""
    shift = eps * np.atleast_1d(np.asarray(direction, dtype=float))

    def rule(t, x, lam):
        return base.rule(t, x, lam) + shift

    return Feedback(rule, name or f"{base.name}+{eps:g}")


def evaluate(pol: Policy, t, x: np.ndarray, lam: MeasureView, draws: Draws | None = None, scn: Scenario | None = None) -> np.ndarray:
    """Actions for every particle, shape ``(n, q)``.

    When ``scn`` is given the actions are checked against its action set.
    """
    x = np.atleast_2d(x)
    n = len(x)
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    if isinstance(pol, Constant):
        a = np.broadcast_to(pol.action, (n, len(pol.action)))
    elif isinstance(pol, Feedback):
        a = np.asarray(pol.rule(t, x, lam), dtype=float)
    elif isinstance(pol, RandomizedFeedback):
        if draws is None:
            raise ValueError("a randomized policy needs a draw source")
        a = np.asarray(pol.sampler(t, x, lam, draws), dtype=float)
    else:
        raise TypeError(f"not a policy: {pol!r}")
    a = a.reshape(n, -1)
    if scn is not None:
        if a.shape[1] != scn.action_dim:
            raise ActionDomainError(f"policy returns {a.shape[1]}-dim actions, scenario expects {scn.action_dim}")
        ok = scn.action_in_set(a)
        if not np.all(ok):
            bad = a[~ok][0]
            raise ActionDomainError(f"action {bad.tolist()} lies outside the action set")
    return a


def policy_name(pol: Policy) -> str:
    return pol.name
