"""Linear-quadratic scenario: Riccati system, value field and optimal feedback.

For the value ansatz ``w_t(lam) = int x^T Q_t x dlam + p_t <1,lam>^2 + pbar_t <1,lam>``
the generator terms collect into

    Q' + B^T Q + Q B + gamma M1 Q + C - Q Bbar Cbar^{-1} Bbar^T Q = 0,   Q_T = H
    p' + 2 gamma M1 p + c = 0,                                         p_T = h
    pbar' + sigma^2 tr Q + gamma M1 pbar + gamma M2 p = 0,              pbar_T = 0

with ``M1 = sum (k-1) p_k`` and ``M2 = sum (k-1)^2 p_k``. The minimiser of
the Hamiltonian is ``a = -Cbar^{-1} Bbar^T Q x`` and the remaining drift of
``w`` plus running cost is ``sum_i (a_i - ahat_i)^T Cbar (a_i - ahat_i)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from branchlab.estimate import ValueField
from branchlab.measure import AtomicMeasure
from branchlab.policy import Feedback, perturbed
from branchlab.scenario import LQCoefficients, law_moments, matvec, quadratic_form

DEFAULT_STEPS = 2000


class RiccatiError(ArithmeticError):
    pass


@dataclass(frozen=True)
class RiccatiSolution:
    grid: np.ndarray  # (n+1,) increasing from 0 to T
    Q: np.ndarray  # (n+1, d, d)
    p: np.ndarray
    pbar: np.ndarray
    coefficients: LQCoefficients

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def _weights(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        T = self.horizon
        if np.any(t < -1e-12) or np.any(t > T * (1 + 1e-12) + 1e-12):
            raise ValueError(f"time outside the solution grid [0, {T}]")
        n = len(self.grid) - 1
        s = np.clip(t / T * n, 0.0, n) if T > 0 else np.zeros_like(t)
        i = np.minimum(s.astype(np.int64), n - 1)
        return i, s - i

    def at(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``Q, p, pbar`` linearly interpolated at each time in ``t``."""
        i, w = self._weights(t)
        Q = (1 - w)[:, None, None] * self.Q[i] + w[:, None, None] * self.Q[i + 1]
        p = (1 - w) * self.p[i] + w * self.p[i + 1]
        pb = (1 - w) * self.pbar[i] + w * self.pbar[i + 1]
        return Q, p, pb

    def is_psd(self, tol: float = 1e-10) -> bool:
        return all(np.linalg.eigvalsh(q).min() >= -tol for q in self.Q)

    def to_csv(self) -> str:
        d = self.Q.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"Q{i}{j}" for i in range(d) for j in range(d)] + ["p", "pbar"])
        for k, t in enumerate(self.grid):
            vals = [t, *self.Q[k].reshape(-1), self.p[k], self.pbar[k]]
            w.writerow([f"{v:.17g}" for v in vals])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "Q": self.Q.tolist(),
            "p": self.p.tolist(),
            "pbar": self.pbar.tolist(),
            "coefficients": self.coefficients.to_json(),
        }


def _rhs(coef: LQCoefficients, t: float, Q, p, pb, m1: float, m2: float):
    """Time derivatives of ``(Q, p, pbar)``."""
    B = coef.B.at(t)
    Bb = coef.Bbar.at(t)
    Ci = np.linalg.inv(coef.Cbar.at(t))
    g = float(coef.gamma.at(t))
    s2 = float(coef.sigma.at(t)) ** 2
    gain = Bb @ Ci @ Bb.T
    dQ = -(B.T @ Q + Q @ B + g * m1 * Q + coef.C.at(t) - Q @ gain @ Q)
    dp = -(2 * g * m1 * p + float(coef.c.at(t)))
    dpb = -(s2 * np.trace(Q) + g * m1 * pb + g * m2 * p)
    return dQ, dp, dpb


def solve_riccati(coef: LQCoefficients, n_steps: int = DEFAULT_STEPS) -> RiccatiSolution:
    """Integrate the Riccati system backward from ``T`` with classical RK4 on a uniform grid."""
    if n_steps < 1:
        raise RiccatiError("need at least one step")
    T = coef.horizon
    dt = T / n_steps
    if T > 0 and dt < 1e-14 * T:
        raise RiccatiError("step size underflow")
    knots = coef.Cbar.times if len(coef.Cbar.times) > 1 else [0.0]
    for t in np.unique(np.concatenate([knots, [0.0, T]])):
        if np.linalg.eigvalsh(coef.Cbar.at(t)).min() <= 0:
            raise RiccatiError(f"Cbar is not positive definite at t={t}")
    m1, m2 = (float(v) for v in law_moments(coef.probs))
    d = coef.d
    grid = np.linspace(0.0, T, n_steps + 1)
    Q = np.zeros((n_steps + 1, d, d))
    p = np.zeros(n_steps + 1)
    pb = np.zeros(n_steps + 1)
    Q[-1], p[-1], pb[-1] = coef.H, coef.h, 0.0
    y = (coef.H.copy(), float(coef.h), 0.0)

    def f(t, y):
        return _rhs(coef, t, *y, m1, m2)

    def shift(y, k, c):
        return tuple(a + c * b for a, b in zip(y, k))

    for n in range(n_steps, 0, -1):
        t = grid[n]
        h = -dt
        k1 = f(t, y)
        k2 = f(t + h / 2, shift(y, k1, h / 2))
        k3 = f(t + h / 2, shift(y, k2, h / 2))
        k4 = f(t + h, shift(y, k3, h))
        y = tuple(a + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))
        q = 0.5 * (y[0] + y[0].T)
        y = (q, y[1], y[2])
        if not (np.all(np.isfinite(q)) and np.isfinite(y[1]) and np.isfinite(y[2])):
            raise RiccatiError(f"solution blew up at t={grid[n - 1]}")
        Q[n - 1], p[n - 1], pb[n - 1] = y
    return RiccatiSolution(grid, Q, p, pb, coef)


def lq_value(t: float, lam: AtomicMeasure, sol: RiccatiSolution) -> float:
    Q, p, pb = sol.at(t)
    if lam.mass == 0:
        return 0.0
    x = lam.unit_atoms()
    n = float(lam.mass)
    return float(np.sum(quadratic_form(Q[0], x))) + float(p[0]) * n * n + float(pb[0]) * n


def lq_value_field(sol: RiccatiSolution) -> ValueField:
    def groups(t, positions, grp, n_groups):
        Q, p, pb = sol.at(t)
        if len(positions) == 0:
            return np.zeros(n_groups)
        quad = np.bincount(grp, weights=quadratic_form(Q[0], positions), minlength=n_groups)
        mass = np.bincount(grp, minlength=n_groups).astype(float)
        return quad + float(p[0]) * mass**2 + float(pb[0]) * mass

    return ValueField("lq", lambda t, lam: lq_value(t, lam, sol), groups)


def feedback_gain(t, sol: RiccatiSolution) -> np.ndarray:
    """``-Cbar^{-1} Bbar^T Q`` at each time, shape ``(n, q, d)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    coef = sol.coefficients
    Q, _, _ = sol.at(t)
    Bb = coef.Bbar(t)
    Cb = coef.Cbar(t)
    n, d, q = Bb.shape
    bq = np.zeros((n, q, d))
    for i in range(q):
        for j in range(d):
            for k in range(d):
                bq[:, i, j] += Bb[:, k, i] * Q[:, k, j]
    if q == 1:
        return -bq / Cb[:, :1, :1]
    return -np.linalg.solve(Cb, bq)


def lq_feedback(sol: RiccatiSolution) -> Feedback:
    def rule(t, x, lam):
        return matvec(feedback_gain(t, sol), x)

    return Feedback(rule, "lq-optimal")


def lq_perturbed(sol: RiccatiSolution, eps: float, direction=None) -> Feedback:
    """Optimal feedback plus ``eps`` times a fixed action (all ones by default)."""
    q = sol.coefficients.q
    direction = np.ones(q) if direction is None else direction
    return perturbed(lq_feedback(sol), eps, direction, name=f"lq-perturbed:{eps:g}")
