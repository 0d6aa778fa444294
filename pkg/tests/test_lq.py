import math

import numpy as np
import pytest

from branchlab import estimate as est
from branchlab import lq
from branchlab.lq import (
    RiccatiError,
    feedback_gain,
    lq_feedback,
    lq_value,
    lq_value_field,
    solve_riccati,
)
from branchlab.measure import AtomicMeasure, embed
from branchlab.policy import evaluate, zero_policy
from branchlab.scenario import LQCoefficients, MeasureView, builtin_lq
from branchlab.simulate import SimConfig


def coef(**kw):
    base = dict(B=0.0, Bbar=1.0, sigma=1.0, gamma=0.0, probs=[0, 1], C=1.0, Cbar=1.0, H=0.0, horizon=1.0)
    base.update(kw)
    return LQCoefficients.build(**base)


def test_tanh_solution():
    sol = solve_riccati(coef(), 2000)
    assert abs(sol.Q[0, 0, 0] - math.tanh(1)) < 1e-6
    t = np.linspace(0, 1, 11)
    assert np.allclose(sol.at(t)[0][:, 0, 0], np.tanh(1 - t), atol=1e-6)


def test_step_halving():
    a = solve_riccati(coef(), 1000).Q[0, 0, 0]
    b = solve_riccati(coef(), 2000).Q[0, 0, 0]
    assert abs(a - b) < 1e-8


def test_pure_quadrature():
    sol = solve_riccati(coef(Bbar=0.0, C=2.0, H=0.5, horizon=2.0), 100)
    assert np.allclose(sol.Q[:, 0, 0], 0.5 + 2.0 * (2.0 - sol.grid))


def test_zero_costs_give_zero_riccati():
    sol = solve_riccati(coef(C=0.0, H=0.0, gamma=1.0, probs=[0.2, 0.3, 0.5]), 100)
    assert np.all(sol.Q == 0) and np.all(sol.p == 0) and np.all(sol.pbar == 0)


def test_linear_equations_closed_form():
    # with Q = 0: p' = -2 g p - c and pbar' = -g pbar - gamma M2 p, g = gamma M1
    gamma, probs, c, h = 0.5, [0.3, 0.2, 0.5], 0.4, 0.7
    m1, m2 = 0.2, 0.8
    sol = solve_riccati(coef(C=0.0, H=0.0, c=c, h=h, gamma=gamma, probs=probs), 4000)
    g = gamma * m1
    tau = 1.0 - sol.grid
    p = h * np.exp(2 * g * tau) + c * (np.exp(2 * g * tau) - 1) / (2 * g)
    assert np.allclose(sol.p, p, rtol=1e-10)
    # pbar(tau) = gamma M2 * int_0^tau exp(g (tau - s)) p(s) ds
    A = h + c / (2 * g)
    pbar = gamma * m2 * (A * (np.exp(2 * g * tau) - np.exp(g * tau)) / g - c / (2 * g) * (np.exp(g * tau) - 1) / g)
    assert np.allclose(sol.pbar, pbar, rtol=1e-9)


def test_value_examples():
    sol = solve_riccati(coef(), 2000)
    assert lq_value(0.3, AtomicMeasure.zero(1), sol) == 0.0
    # at t=0: tanh(1) + pbar(0), pbar(0) = int_0^1 tanh(s) ds = log cosh 1
    assert lq_value(0.0, embed([[1.0]]), sol) == pytest.approx(math.tanh(1) + math.log(math.cosh(1)), abs=1e-6)
    sol2 = solve_riccati(coef(H=2.0, h=0.5), 100)
    assert lq_value(1.0, embed([[3.0]]), sol2) == pytest.approx(2.0 * 9 + 0.5)
    assert lq_value(1.0, embed([[3.0]]), sol2) == pytest.approx(builtin_lq(coef(H=2.0, h=0.5)).terminal_cost(embed([[3.0]])))


def test_value_field_groups_match_pointwise():
    sol = solve_riccati(coef(gamma=0.3, probs=[0.5, 0, 0.5], h=0.2, c=0.1), 200)
    w = lq_value_field(sol)
    x = np.array([[0.5], [1.0], [-2.0]])
    g = np.array([0, 0, 2])
    got = w.evaluate(0.4, MeasureView(x, g, 3))
    assert got[1] == 0.0
    assert got[0] == pytest.approx(w(0.4, embed([[0.5], [1.0]])))
    assert got[2] == pytest.approx(w(0.4, embed([[-2.0]])))


def test_feedback_examples():
    sol = solve_riccati(coef(), 2000)
    view = MeasureView.of_measure(embed([[1.0]]), 2)
    a = evaluate(lq_feedback(sol), 0.0, np.array([[1.0], [0.0]]), view)
    assert a[0, 0] == pytest.approx(-math.tanh(1), abs=1e-6)
    assert a[1, 0] == 0.0
    zero = solve_riccati(coef(C=0.0), 10)
    assert np.all(feedback_gain(np.linspace(0, 1, 5), zero) == 0)


def test_feedback_in_two_dimensions():
    B = [[0.0, 1.0], [0.0, 0.0]]
    sol = solve_riccati(coef(B=B, Bbar=[[0.0], [1.0]], C=np.eye(2), Cbar=2.0, H=np.eye(2), sigma=0.5), 500)
    K = feedback_gain(0.0, sol)[0]
    Q = sol.Q[0]
    assert np.allclose(K, -np.array([[0.0, 1.0]]) @ Q / 2.0)
    assert sol.is_psd()


def test_riccati_stays_psd_with_branching():
    sol = solve_riccati(coef(H=1.0, gamma=0.2, probs=[0.5, 0, 0.5]), 500)
    assert sol.is_psd()


def test_time_outside_grid_rejected():
    sol = solve_riccati(coef(), 10)
    with pytest.raises(ValueError):
        sol.at(1.5)


def test_bad_inputs():
    with pytest.raises(RiccatiError):
        solve_riccati(coef(), 0)


def test_csv_layout():
    text = solve_riccati(coef(), 4).to_csv().splitlines()
    assert text[0] == "t,Q00,p,pbar"
    assert len(text) == 6
    assert float(text[1].split(",")[1]) == pytest.approx(math.tanh(1), abs=1e-3)


@pytest.mark.slow
def test_martingale_check_separates_correct_and_wrong_linear_equation(monkeypatch):
    c = coef(C=1.0, H=1.0, gamma=1.0, probs=[0, 0, 1], c=1.0, h=1.0)
    scn = builtin_lq(c)
    good = solve_riccati(c, 1000)
    right = lq._rhs

    def without_factor_two(coef, t, Q, p, pb, m1, m2):
        dQ, dp, dpb = right(coef, t, Q, p, pb, m1, m2)
        return dQ, dp + float(coef.gamma.at(t)) * m1 * p, dpb

    monkeypatch.setattr(lq, "_rhs", without_factor_two)
    bad = solve_riccati(c, 1000)
    monkeypatch.undo()
    assert bad.p[0] < good.p[0]
    cfg = SimConfig(1.0, 2e-3)
    lam0 = embed([[0.5]])
    kw = dict(seed=13, mode="martingale")
    ok = est.submartingale_test(scn, lq_feedback(good), 0.0, lam0, lq_value_field(good), cfg, 3000, [0.5], **kw)
    wrong = est.submartingale_test(scn, lq_feedback(bad), 0.0, lam0, lq_value_field(bad), cfg, 3000, [0.5], **kw)
    assert ok.passed, ok.to_json()
    assert not wrong.passed, wrong.to_json()
