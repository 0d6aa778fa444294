import numpy as np
import pytest

from branchlab.measure import embed
from branchlab.policy import (
    ActionDomainError,
    ArrayDraws,
    Constant,
    Feedback,
    evaluate,
    mixture,
    point_mass,
    zero_policy,
)
from branchlab.scenario import MeasureView
from branchlab.simulate import SimConfig, simulate_path

from conftest import tabular

VIEW = MeasureView.of_measure(embed([[0.0]]), 1)


def test_constant_zero():
    assert np.array_equal(evaluate(zero_policy(1), 0.3, np.array([[7.0]]), VIEW), [[0.0]])


def test_feedback_minus_x():
    pol = Feedback(lambda t, x, lam: -x)
    assert evaluate(pol, 0.0, np.array([[3.0]]), VIEW)[0, 0] == -3.0


def test_mixture_mean():
    pol = mixture([[1.0], [-1.0]], [0.5, 0.5])
    u = np.random.default_rng(1).random((10_000, 1))
    x = np.zeros((10_000, 1))
    view = MeasureView.of_measure(embed([[0.0]]), 10_000)
    a = evaluate(pol, 0.0, x, view, ArrayDraws(u))[:, 0]
    assert set(np.unique(a)) == {-1.0, 1.0}
    assert abs(a.mean()) < 3 * a.std(ddof=1) / np.sqrt(len(a))


def test_randomized_needs_draws():
    with pytest.raises(ValueError):
        evaluate(mixture([[1.0]], [1.0]), 0.0, np.zeros((1, 1)), VIEW)


def test_action_box_enforced():
    scn = tabular(action_box={"low": [-1.0], "high": [1.0]})
    with pytest.raises(ActionDomainError):
        evaluate(Constant([2.0]), 0.0, np.zeros((1, 1)), VIEW, scn=scn)
    with pytest.raises(ActionDomainError):
        evaluate(Constant([0.0, 0.0]), 0.0, np.zeros((1, 1)), VIEW, scn=scn)


def test_point_mass_matches_feedback_path():
    scn = tabular(sigma=[[1.0]], Bbar=[[1.0]], gamma=1.0, probs=[0.3, 0.2, 0.5])
    rule = lambda t, x, lam: -x
    cfg = SimConfig(horizon=1.0, dt_max=0.01)
    lam0 = embed([[1.0], [-0.5]])
    a = simulate_path(scn, Feedback(rule), 0.0, lam0, cfg, seed=5)
    b = simulate_path(scn, point_mass(rule), 0.0, lam0, cfg, seed=5)
    assert a.to_json() == b.to_json()
