import math

import numpy as np
import pytest
from scipy.integrate import quad

from branchlab import estimate as est
from branchlab.measure import embed
from branchlab.policy import Feedback, zero_policy
from branchlab.scenario import MeasureView
from branchlab.simulate import SimConfig, StepContext

from conftest import tabular

ZERO = zero_policy(1)
DELTA0 = embed([[0.0]])


def test_mean_se_basics():
    m, se = est.mean_se([1.0, 2.0, 3.0, 4.0])
    assert m == 2.5
    assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert math.isnan(est.mean_se([1.0])[1])
    assert est.z_score(0.0, 0.0) == 0.0
    assert est.z_score(1.0, 0.0) == math.inf


def test_zero_costs_give_zero_estimate():
    res = est.estimate_cost(tabular(sigma=[[1.0]], gamma=1.0, probs=[0.5, 0, 0.5]), ZERO, 0.0, DELTA0, SimConfig(1.0, 0.01), 200, seed=1)
    assert (res.mean, res.standard_error) == (0.0, 0.0)


def test_pure_death_survival_probability():
    scn = tabular(gamma=1.0, probs=[1.0], h=1.0)
    res = est.estimate_cost(scn, ZERO, 0.0, DELTA0, SimConfig(1.0, 0.05), 10_000, seed=2)
    assert abs(res.mean - math.exp(-1)) < 3 * res.standard_error


def test_zero_control_lq_cost_matches_moment_equations():
    # E<x^2, xi_t> obeys S' = sigma^2 m + g S and E<1, xi_t> obeys m' = g m, with g = gamma M1
    gamma, probs = 0.5, [0.3, 0.2, 0.5]
    g = gamma * 0.2
    x0 = [[1.0], [-0.5]]
    S0, m0 = 1.25, 2.0
    S = lambda t: math.exp(g * t) * (S0 + m0 * t)
    exact = quad(S, 0, 1)[0] + S(1.0)
    scn = tabular(sigma=[[1.0]], gamma=gamma, probs=probs, C=[[1.0]], H=[[1.0]])
    res = est.estimate_cost(scn, ZERO, 0.0, embed(x0), SimConfig(1.0, 1e-3), 4000, seed=3)
    assert abs(res.mean - exact) < 3 * res.standard_error + 0.01 * exact


def test_standard_error_scales_like_inverse_root():
    scn = tabular(gamma=1.0, probs=[0.3, 0.2, 0.5], h=1.0)
    scaled = []
    for n in (100, 1000, 10_000):
        res = est.estimate_cost(scn, ZERO, 0.0, DELTA0, SimConfig(1.0, 0.1), n, seed=4)
        scaled.append(res.standard_error * math.sqrt(n))
    assert max(scaled) / min(scaled) < 1.2


def test_estimate_does_not_depend_on_thread_count():
    scn = tabular(sigma=[[1.0]], gamma=1.0, probs=[0.3, 0.2, 0.5], C=[[1.0]])
    cfg = SimConfig(1.0, 0.05)
    a = est.estimate_cost(scn, ZERO, 0.0, DELTA0, cfg, 5000, seed=5, threads=1)
    b = est.estimate_cost(scn, ZERO, 0.0, DELTA0, cfg, 5000, seed=5, threads=4)
    assert a == b


def test_compare_same_policy_has_zero_difference():
    scn = tabular(sigma=[[1.0]], gamma=1.0, probs=[0.3, 0.2, 0.5], C=[[1.0]])
    res = est.compare(scn, ZERO, ZERO, 0.0, DELTA0, SimConfig(1.0, 0.05), 500, seed=6)
    assert res.difference.mean == 0.0 and res.difference.standard_error == 0.0
    assert not res.significant


def test_compare_detects_better_policy():
    scn = tabular(sigma=[[1.0]], Bbar=[[1.0]], C=[[1.0]], Cbar=[[1.0]], H=[[1.0]])
    pull = Feedback(lambda t, x, lam: -0.7 * x, "pull")
    res = est.compare(scn, pull, ZERO, 0.0, embed([[2.0]]), SimConfig(1.0, 0.01), 2000, seed=7)
    assert res.difference.mean < 0 and res.significant


def test_moment_bounds_without_branching_are_exact():
    lam0 = embed([[0.0], [1.0], [2.0]])
    rep = est.check_moment_bounds(tabular(), ZERO, 0.0, lam0, SimConfig(1.0, 0.1), 50, seed=0)
    assert [c.estimate for c in rep.checks] == [3.0, 9.0]
    assert [c.bound for c in rep.checks] == [3.0, 9.0]
    assert rep.ok


@pytest.mark.parametrize("probs", [[1.0], [0, 0, 1], [0.3, 0.2, 0.5]])
def test_moment_bounds_hold(probs):
    rep = est.check_moment_bounds(tabular(gamma=1.0, probs=probs), ZERO, 0.0, DELTA0, SimConfig(1.0, 0.05), 4000, seed=8)
    assert rep.ok, rep.to_json()


def test_generator_of_mass_is_branching_drift():
    scn = tabular(gamma=2.0, probs=[0.3, 0.2, 0.5])
    x = np.array([[0.0], [1.0]])
    view = MeasureView(x, np.zeros(2, dtype=np.int64), 1)
    ctx = StepContext(np.zeros(2), np.full(2, 0.1), x, np.zeros((2, 1)), view.groups, view, np.zeros((2, 1)), np.zeros((2, 1, 1)), 1)
    gen, qv = est.generator_terms(scn, ctx, est.outer_function("y"), est.test_function("one"))
    assert np.allclose(gen, 2.0 * 0.2)
    assert np.allclose(qv, 2.0 * 0.8)


def test_test_functions_derivatives():
    x = np.array([[0.3], [-1.2], [2.0]])
    for name in ("bump", "bump:2", "sigmoid", "sigmoid:0.5"):
        phi = est.test_function(name)
        e = 1e-5
        num = (phi.value(x + e) - phi.value(x - e)) / (2 * e)
        assert np.allclose(phi.grad(x)[:, 0], num, atol=1e-6), name
        num2 = (phi.grad(x + e)[:, 0] - phi.grad(x - e)[:, 0]) / (2 * e)
        assert np.allclose(phi.hess(x)[:, 0, 0], num2, atol=1e-5), name
    with pytest.raises(ValueError):
        est.test_function("wiggle")
    with pytest.raises(ValueError):
        est.outer_function("cube")


def test_martingale_trivial_without_dynamics():
    rep = est.martingale_test(
        tabular(), ZERO, 0.0, embed([[0.0], [1.0]]), SimConfig(1.0, 0.1), 50,
        est.outer_function("y2"), est.test_function("bump"), [0.5],
    )
    assert rep.passed and rep.max_abs_z == 0.0


def test_martingale_tests_pass_on_branching_diffusion():
    scn = tabular(sigma=[[1.0]], Bbar=[[1.0]], gamma=1.0, probs=[0.3, 0.2, 0.5])
    pol = Feedback(lambda t, x, lam: -x)
    pairs = [(est.outer_function(f), est.test_function(p)) for f, p in [("y", "one"), ("y2", "bump"), ("exp-neg", "sigmoid")]]
    reps = est.martingale_tests(scn, pol, 0.0, embed([[0.5]]), SimConfig(1.0, 0.01), 2000, pairs, [0.5], seed=9, quadratic_variation=True)
    assert len(reps) == 4 and reps[-1].descriptor.startswith("qv:")
    assert all(r.passed for r in reps), [r.to_json() for r in reps]


def test_martingale_test_rejects_mismatched_compensator():
    # the compensator assumes rate 0.2 while the process branches at rate 1
    scn = tabular(gamma=1.0, probs=[0, 0, 1])
    wrong = tabular(gamma=0.2, probs=[0, 0, 1], bounds={"C_gamma": 1.0})

    rep = est.martingale_test(wrong, ZERO, 0.0, DELTA0, SimConfig(1.0, 0.05), 2000, est.outer_function("y"), est.test_function("one"), [0.5], seed=10)
    assert rep.passed
    heavy = est.martingale_test(scn, ZERO, 0.0, DELTA0, SimConfig(1.0, 0.05), 2000, est.outer_function("y"), est.test_function("one"), [0.5], seed=10)
    assert heavy.passed
    # mixing the two: simulate the fast process, compensate with the slow one
    seeds = est.replication_seeds(10, 2000)
    from branchlab.simulate import time_grid, snap_times

    grid = time_grid(0.0, SimConfig(1.0, 0.05), [0.5])
    keep = snap_times(grid, [0.0, 0.5, 1.0])
    pair = [(est.outer_function("y"), est.test_function("one"))]
    out = est.run_replications(
        scn, ZERO, 0.0, DELTA0, SimConfig(1.0, 0.05), seeds,
        lambda ens, obs: {"v": obs[0].values, "a": obs[0].comp},
        make_observers=lambda: [est._Compensators(wrong, pair, keep, False)], grid=grid,
    )
    M = out["v"][:, 0, :] - out["a"][:, 0, :]
    rep = est._interval_reports([0.0, 0.5, 1.0], M, "mismatch", 0, 4.0, "martingale")
    assert not rep.passed


def test_submartingale_with_zero_field_and_nonnegative_cost():
    scn = tabular(sigma=[[1.0]], gamma=1.0, probs=[0.3, 0.2, 0.5], C=[[1.0]])
    rep = est.submartingale_test(scn, ZERO, 0.0, DELTA0, est.ZERO_FIELD, SimConfig(1.0, 0.05), 500, [0.5], seed=11)
    assert rep.passed and all(iv.mean >= 0 for iv in rep.intervals)
    with pytest.raises(ValueError):
        est.submartingale_test(scn, ZERO, 0.0, DELTA0, est.ZERO_FIELD, SimConfig(1.0, 0.05), 10, [0.5], mode="sideways")


def test_report_serialisation():
    rep = est.martingale_test(tabular(), ZERO, 0.0, DELTA0, SimConfig(1.0, 0.1), 10, est.outer_function("y"), est.test_function("one"), [0.5])
    js = rep.to_json()
    assert js["intervals"][0].keys() == {"s", "h", "mean", "SE", "z", "verdict"}
    lines = rep.to_csv().strip().split("\n")
    assert lines[0] == "test,s,h,mean,SE,z,verdict" and len(lines) == 3


def test_mass_profile_of_binary_branching():
    prof = est.mass_profile(tabular(gamma=1.0, probs=[0, 0, 1]), ZERO, 0.0, DELTA0, SimConfig(1.0, 0.05), 4000, [0.5], seed=12)
    for t, r in prof:
        assert abs(r.mean - math.exp(t)) < 3 * r.standard_error + 1e-12
