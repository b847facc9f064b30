import numpy as np
import pytest

from gprloc.geom import Pose3
from gprloc.graph import (FactorGraph, NoiseModel, PriorFactor, State, gpr_factor, gpr_noise,
                          wheel_factor, wheel_noise)
from gprloc.solver import (IncrementalSmoother, IndeterminateSystemError, SolverConfig, linearize,
                           optimize, solve_normal_equations)

from util import random_pose, random_state

PRIOR = NoiseModel.from_sigmas([0.01] * 15)
ODO = NoiseModel.from_sigmas([0.05] * 6)
# pose-only problems still carry velocity and bias; pin those, leave the pose free
VB = NoiseModel.from_sigmas([1e6] * 6 + [1.0] * 9)


def _anchor(g, k):
    g.add_factor(PriorFactor(k, State(g.values[k].pose), VB))


def _chain(n, rng=None, perturb=0.0, step=Pose3.from_xyz_yaw(1.0, 0.0, yaw=0.1)):
    """Poses composed from a fixed step, consistent odometry, optional perturbed init."""
    truth = [Pose3()]
    for _ in range(n - 1):
        truth.append(truth[-1].compose(step))
    g = FactorGraph()
    for k, p in enumerate(truth):
        init = p
        if perturb and k:
            init = p.boxplus(np.concatenate([rng.normal(size=3) * 0.01, rng.normal(size=3) * perturb]))
        g.add_variable(k, State(init))
    g.add_factor(PriorFactor(0, State(truth[0]), PRIOR))
    for k in range(1, n):
        g.add_factor(wheel_factor(k - 1, k, truth[k].between(truth[k - 1]), ODO))
        _anchor(g, k)
    return g, truth


def test_linearize_shapes_and_cost():
    g, _ = _chain(4, np.random.default_rng(0), perturb=0.1)
    sys = linearize(g)
    assert sys.J.shape == (15 + 3 * (6 + 15), 4 * 15)
    assert sys.cost == pytest.approx(g.cost())
    g1 = FactorGraph()
    g1.add_variable(0, State())
    g1.add_factor(PriorFactor(0, State(), PRIOR))
    np.testing.assert_array_equal(linearize(g1).r, 0.0)


def test_single_prior_one_step():
    rng = np.random.default_rng(1)
    target = State(Pose3(), rng.normal(size=3), rng.normal(size=6) * 0.1)
    g = FactorGraph()
    g.add_variable(0, State(Pose3(), np.zeros(3), np.zeros(6)))
    g.add_factor(PriorFactor(0, target, PRIOR))
    sys = linearize(g)
    d = solve_normal_equations(sys, 0.0)
    x = g.values[0].retract(d)
    np.testing.assert_allclose(x.v, target.v, atol=1e-12)
    np.testing.assert_allclose(x.b, target.b, atol=1e-12)


def test_large_damping_shrinks_the_step():
    g, _ = _chain(5, np.random.default_rng(2), perturb=0.1)
    sys = linearize(g)
    norms = [np.linalg.norm(solve_normal_equations(sys, lam)) for lam in (0.0, 1e2, 1e6, 1e10)]
    assert norms[-1] < 1e-8 * norms[0]
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_sparse_step_matches_dense_reference():
    rng = np.random.default_rng(3)
    g = FactorGraph()
    for k in range(3):
        g.add_variable(k, random_state(rng))
    g.add_factor(PriorFactor(0, random_state(rng), PRIOR))
    g.add_factor(wheel_factor(0, 1, random_pose(rng, 0.5), ODO))
    g.add_factor(wheel_factor(1, 2, random_pose(rng, 0.5), ODO))
    g.add_factor(PriorFactor(1, random_state(rng), VB))
    g.add_factor(PriorFactor(2, random_state(rng), NoiseModel.from_sigmas([1.0] * 15)))
    sys = linearize(g)
    J = sys.J.toarray()
    for lam in (0.0, 1e-3):
        H = J.T @ J
        ref = np.linalg.solve(H + lam * np.diag(np.diag(H)), -J.T @ sys.r)
        np.testing.assert_allclose(solve_normal_equations(sys, lam), ref, atol=1e-9, rtol=1e-9)


def test_start_at_optimum_takes_no_steps():
    g, _ = _chain(5)
    _, rep = optimize(g)
    assert rep.accepted_steps == 0 and rep.converged


def test_missing_prior_is_indeterminate():
    g = FactorGraph()
    g.add_variable(0, State())
    g.add_variable(1, State(Pose3.from_xyz_yaw(1.0, 0.0)))
    g.add_factor(wheel_factor(0, 1, Pose3.from_xyz_yaw(-1.0, 0.0), ODO))
    with pytest.raises(IndeterminateSystemError) as ei:
        optimize(g)
    assert ei.value.keys


def test_chain_recovered_from_perturbed_start():
    g, truth = _chain(10, np.random.default_rng(4), perturb=0.1)
    vals, rep = optimize(g)
    err = max(np.linalg.norm(vals[k].pose.t - truth[k].t) for k in range(10))
    assert err < 1e-6
    costs = rep.accepted_costs()
    assert all(a >= b for a, b in zip(costs, costs[1:]))
    assert rep.converged


def test_report_csv():
    g, _ = _chain(4, np.random.default_rng(5), perturb=0.1)
    _, rep = optimize(g)
    lines = rep.to_csv().strip().split("\n")
    assert lines[0] == "iteration,cost,lambda,step_norm,accepted"
    assert len(lines) == len(rep.iterations) + 1


def test_loop_closure_reduces_endpoint_error():
    # true square loop of 40 steps; odometry with a small heading bias
    n = 40
    step = Pose3.from_xyz_yaw(1.0, 0.0, yaw=2 * np.pi / n)
    truth = [Pose3()]
    for _ in range(n):
        truth.append(truth[-1].compose(step))
    biased = Pose3.from_xyz_yaw(1.0, 0.0, yaw=2 * np.pi / n + 0.005)

    def build(closure):
        g = FactorGraph()
        p = Pose3()
        for k in range(n + 1):
            g.add_variable(k, State(p))
            p = p.compose(biased)
        g.add_factor(PriorFactor(0, State(truth[0]), PRIOR))
        for k in range(1, n + 1):
            g.add_factor(wheel_factor(k - 1, k, biased.inverse(), wheel_noise(1.0)))
            _anchor(g, k)
        if closure:
            g.add_factor(gpr_factor(0, n, truth[n].between(truth[0]), NoiseModel.from_sigmas([0.01] * 6)))
        return g

    odo = build(False)
    vals_o, _ = optimize(odo)
    g = build(True)
    init_cost = g.cost()
    vals, rep = optimize(g)
    assert rep.final_cost < init_cost
    end_o = np.linalg.norm(vals_o[n].pose.t - truth[n].t)
    end_c = np.linalg.norm(vals[n].pose.t - truth[n].t)
    assert end_c < end_o


def test_incremental_first_update_and_odometry_prediction():
    sm = IncrementalSmoother()
    with pytest.raises(ValueError):
        sm.update(0, [])
    sm = IncrementalSmoother()
    est = sm.update(0, [PriorFactor(0, State(), PRIOR)], initial=State())
    assert list(est) == [0]
    z = Pose3.from_xyz_yaw(-1.0, 0.0)
    est = sm.update(1, [wheel_factor(0, 1, z, ODO), PriorFactor(1, State(), VB)])
    np.testing.assert_allclose(est[1].pose.t, [1.0, 0.0, 0.0], atol=1e-12)
    with pytest.raises(ValueError):
        sm.update(2, [gpr_factor(0, 1, z, gpr_noise())])


def test_incremental_matches_batch_and_is_stable():
    rng = np.random.default_rng(6)
    n = 15
    g, truth = _chain(n)
    sm = IncrementalSmoother()
    sm.update(0, [g.factors[0]], initial=State(truth[0]))
    zs = []
    for k in range(1, n):
        z = truth[k].between(truth[k - 1]).boxplus(rng.normal(size=6) * 0.02)
        zs.append(z)
        fs = [wheel_factor(k - 1, k, z, ODO), PriorFactor(k, State(), VB)]
        if k == n - 1:
            fs.append(gpr_factor(0, k, truth[k].between(truth[0]), gpr_noise()))
        before = {j: sm.estimate[j] for j in sm.estimate}
        sm.update(k, fs)
        if k < n - 1:
            moved = max(np.linalg.norm(sm.estimate[j].pose.t - before[j].pose.t) for j in before)
            assert moved < 1e-6
    init = {k: State() for k in range(n)}
    p = truth[0]
    for k in range(n):
        init[k] = State(p)
        if k < n - 1:
            p = p.compose(zs[k].inverse())
    _, rep = optimize(sm.graph, init)
    assert abs(sm.graph.cost() - rep.final_cost) <= 0.01 * max(rep.final_cost, 1e-12)


def test_window_mode_tracks_consistent_chain():
    n = 12
    g, truth = _chain(n)
    sm = IncrementalSmoother(SolverConfig(mode="window", window=4))
    sm.update(0, [g.factors[0]], initial=State(truth[0]))
    for k in range(1, n):
        sm.update(k, [f for f in g.factors if k in f.keys and max(f.keys) == k])
    for k in range(n):
        np.testing.assert_allclose(sm.estimate[k].pose.t, truth[k].t, atol=1e-9)


@pytest.mark.parametrize("kw", [dict(cost_tol=0.0), dict(lambda_up=1.0), dict(mode="isam")])
def test_solver_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)
