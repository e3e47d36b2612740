import math

import numpy as np
import pytest

from sinkflow import bridge, sinkhorn
from sinkflow.bridge import DriftField
from sinkflow.measures import (
    DegeneracyError,
    DiscreteMeasure,
    ParameterError,
    StructureError,
    kl_divergence,
    total_variation,
)

T_GRID = np.linspace(0.01, 0.99, 99)


@pytest.fixture(scope="module")
def two_gauss():
    problem = bridge.gaussian_problem()
    return problem, bridge.static_bridge(problem)


@pytest.fixture(scope="module")
def small():
    problem = bridge.gaussian_problem(m=61)
    return problem, bridge.static_bridge(problem)


def flat(value, t=None, z=None):
    t = np.linspace(0.0, 0.99, 100) if t is None else t
    z = np.linspace(-4.0, 4.0, 81) if z is None else z
    return DriftField(t, z, np.full((t.size, z.size), float(value)))


def test_problem_validation():
    z = np.linspace(-4, 4, 41)
    w = np.exp(-(z**2) / 0.5)
    m = DiscreteMeasure(w / w.sum(), z)
    with pytest.raises(StructureError):
        bridge.BridgeProblem(m, DiscreteMeasure(w / w.sum(), z + 0.1))
    with pytest.raises(StructureError):
        bridge.BridgeProblem(m, DiscreteMeasure(w / w.sum()))
    with pytest.raises(ParameterError):
        bridge.BridgeProblem(m, m, sigma_diff=0.0)
    with pytest.raises(ParameterError):
        bridge.gaussian_problem(mean0=-3.5)
    with pytest.raises(ParameterError):
        bridge.gaussian_problem(m=2)


def test_identical_endpoints_give_symmetric_coupling():
    problem = bridge.gaussian_problem(m=81, mean0=0.0, meanT=0.0)
    pot = bridge.static_bridge(problem)
    pi = pot.coupling().density()
    assert np.allclose(pi, pi.T, atol=1e-12)
    f = pot.f - np.dot(problem.mu0.weights, pot.f)
    assert np.allclose(f, pot.g, atol=1e-8)


def test_static_marginals(two_gauss):
    problem, pot = two_gauss
    pi = pot.coupling().density()
    assert total_variation(pi.sum(axis=1), problem.mu0.weights) < 1e-8
    assert total_variation(pi.sum(axis=0), problem.muT.weights) < 1e-8


def test_large_noise_approaches_product():
    problem = bridge.gaussian_problem(m=101, sigma_diff=5.0)
    pi = bridge.static_bridge(problem).coupling().density()
    product = np.outer(problem.mu0.weights, problem.muT.weights)
    assert kl_divergence(pi, product) < 1e-3


def test_static_bridge_reports_non_convergence():
    from sinkflow.measures import ConvergenceError

    with pytest.raises(ConvergenceError):
        bridge.static_bridge(bridge.gaussian_problem(m=41), max_iter=1)


def test_lift_of_zero_path_potential(small):
    problem, _ = small
    g = -problem.muT.log_weights
    gt = bridge.lift_potential(g, problem, T_GRID)
    assert np.max(np.abs(gt)) < 1e-13
    assert np.max(np.abs(bridge.lift_drift(g, problem, T_GRID).values)) < 1e-11


def test_lift_of_linear_potential():
    # a wide grid keeps the heat kernel clear of the edges
    problem = bridge.gaussian_problem(m=601, extent=12.0)
    a = 0.5
    z = problem.grid
    g = a * z - problem.muT.log_weights
    t = np.linspace(0.0, 0.95, 20)
    gt = bridge.lift_potential(g, problem, t)
    inner = np.abs(z) <= 2.0
    expected = a * z[None, :] + a * a * (1.0 - t[:, None]) / 2.0
    assert np.max(np.abs(gt - expected)[:, inner]) < 1e-9
    v = bridge.lift_drift(g, problem, t)
    assert np.max(np.abs(v.values[:, inner] - a)) < 1e-9


def test_lift_approaches_terminal_potential():
    problem = bridge.gaussian_problem()
    z = problem.grid
    g = 0.3 * np.sin(z) - problem.muT.log_weights
    gt = bridge.lift_potential(g, problem, [0.999], delta=1e-3)[0]
    inner = np.abs(z) <= 3.0
    assert np.max(np.abs(gt - bridge.path_potential(g, problem))[inner]) < 1e-2


def test_lift_rejects_times_near_one(small):
    problem, pot = small
    with pytest.raises(ParameterError):
        bridge.lift_potential(pot.g, problem, [0.5, 0.999])
    with pytest.raises(ParameterError):
        bridge.lift_potential(pot.g, problem, [0.5], delta=1e-6)


def test_drift_odd_for_centered_problem():
    problem = bridge.gaussian_problem(m=121, mean0=0.0, meanT=0.0, var0=0.3, varT=0.3)
    v = bridge.lift_drift(bridge.static_bridge(problem).g, problem, T_GRID).values
    assert np.all(np.isfinite(v))
    assert np.max(np.abs(v + v[:, ::-1])) < 1e-6


def test_reversal_mirrors_forward_drift(two_gauss):
    # with muT the mirror image of mu0, the reversal is w(t, z) = -v(1 - t, -z)
    problem, pot = two_gauss
    v = bridge.lift_drift(pot.g, problem, T_GRID)
    w = bridge.reversal_drift(v, pot.coupling())
    # grid error grows into the low-density tails
    inner = np.abs(problem.grid) <= 1.0
    gap = np.abs(w.values + v.values[::-1, ::-1])[:, inner]
    assert np.max(gap) < 5e-3 and np.median(gap) < 1e-3


def test_reversal_is_involution(small):
    problem, pot = small
    t = np.linspace(0.05, 0.95, 19)
    v = bridge.lift_drift(pot.g, problem, t)
    w = bridge.reversal_drift(v, pot.coupling())
    assert np.max(np.abs(bridge.reversal_drift(w, pot.coupling()).values - v.values)) < 1e-8


def test_reversible_drift_is_its_own_reversal():
    z = np.linspace(-4, 4, 81)
    t = np.linspace(0.0, 0.9, 10)
    score = DriftField(t, z, np.tile(-z / 0.5, (t.size, 1)))
    v = score.scaled(0.5)
    assert np.allclose(bridge.reverse_drift(v, score).values, v.values, atol=1e-15)


def test_path_marginal_endpoints(small):
    problem, pot = small
    pi = pot.coupling()
    assert total_variation(bridge.path_marginal(pi, 0.0, problem.grid) * problem.dz, problem.mu0.weights) < 1e-8
    assert total_variation(bridge.path_marginal(pi, 1.0, problem.grid) * problem.dz, problem.muT.weights) < 1e-8
    for t in (0.1, 0.5, 0.9):
        p = bridge.path_marginal(pi, t, problem.grid)
        assert np.all(p >= 0.0) and abs(p.sum() * problem.dz - 1.0) < 1e-6
    with pytest.raises(ParameterError):
        bridge.path_marginal(pi, 1.5, problem.grid)


def test_path_marginal_of_product_coupling(small):
    problem, _ = small
    z = problem.grid
    w0, w1 = problem.mu0.weights, problem.muT.weights
    pi = np.log(np.outer(w0, w1))
    t, var = 0.5, 0.25
    oracle = np.zeros(z.size)
    for i in range(z.size):
        for j in range(z.size):
            m = 0.5 * z[i] + 0.5 * z[j]
            oracle += w0[i] * w1[j] * np.exp(-((z - m) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)
    assert np.allclose(bridge.path_marginal(pi, t, z), oracle, rtol=1e-10, atol=1e-300)
    logp, score = bridge.path_log_density(pi, t, z)
    assert np.allclose(score[1:-1], np.gradient(logp, z)[1:-1], atol=0.05)


def test_simulate_em_brownian_motion():
    z = np.linspace(-6, 6, 121)
    point = DiscreteMeasure(np.eye(121)[60], z)
    n = 40_000
    ens = bridge.simulate_em(flat(0.0, z=z), point, n, 50, seed=1)
    assert abs(ens.positions.var() - 1.0) < 3 * math.sqrt(2 / n)
    ens = bridge.simulate_em(flat(0.7, z=z), point, n, 50, seed=2, t_end=0.5)
    assert abs(ens.positions.mean() - 0.35) < 3 * math.sqrt(0.5 / n)


def test_simulate_em_is_reproducible(small):
    problem, _ = small
    a = bridge.simulate_em(flat(0.1), problem.mu0, 30_000, 10, seed=5)
    b = bridge.simulate_em(flat(0.1), problem.mu0, 30_000, 10, seed=5)
    assert np.array_equal(a.positions, b.positions)
    assert a.to_text() == b.to_text()
    c = bridge.simulate_em(flat(0.1), problem.mu0, 30_000, 10, seed=6)
    assert not np.array_equal(a.positions, c.positions)


def test_identical_endpoints_transport():
    problem = bridge.gaussian_problem(m=101, mean0=0.0, meanT=0.0)
    v = bridge.lift_drift(bridge.static_bridge(problem).g, problem, T_GRID)
    ens = bridge.simulate_em(v, problem.mu0, 20_000, 100, seed=3)
    assert ens.tv_to(problem.muT.weights, problem.grid) < 0.05


@pytest.mark.slow
def test_two_gaussian_transport_and_reverse(two_gauss):
    problem, pot = two_gauss
    v = bridge.lift_drift(pot.g, problem, T_GRID)
    fwd = bridge.simulate_em(v, problem.mu0, 100_000, 200, seed=4)
    assert fwd.tv_to(problem.muT.weights, problem.grid) < 0.05
    w = bridge.reversal_drift(v, pot.coupling())
    back = bridge.simulate_em(w, problem.muT, 100_000, 200, seed=5, time_flip=True)
    assert back.tv_to(problem.mu0.weights, problem.grid) < 0.05


def test_drift_field_roundtrip_and_checks():
    t, z = np.linspace(0.0, 0.9, 4), np.linspace(-1.0, 1.0, 5)
    f = DriftField(t, z, np.arange(20.0).reshape(4, 5) / 7.0)
    g = DriftField.from_text(f.to_text())
    assert np.array_equal(g.values, f.values) and np.allclose(g.t_grid, t) and np.allclose(g.z_grid, z)
    assert np.array_equal((f + f).values, 2 * f.values) and np.array_equal((f - f).values, 0 * f.values)
    with pytest.raises(StructureError):
        f + DriftField(t, z * 2, f.values)
    with pytest.raises(ParameterError):
        DriftField(np.linspace(0.5, 1.0, 4), z, f.values)
    with pytest.raises(StructureError):
        DriftField(t, z, f.values[:, :3])
    with pytest.raises(DegeneracyError):
        DriftField(t, z, np.full((4, 5), np.nan))
    with pytest.raises(StructureError):
        DriftField.from_text("# 2 2 0 0.1 0 1\n1 2\n")
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_drift_interpolation_clamps():
    t, z = np.array([0.0, 0.5]), np.array([0.0, 1.0, 2.0])
    f = DriftField(t, z, np.array([[0.0, 1.0, 2.0], [10.0, 11.0, 12.0]]))
    assert np.allclose(f.at(0.25, np.array([0.5, -3.0, 9.0])), [5.5, 5.0, 7.0])
    assert np.allclose(f.at(0.9, np.array([1.0])), [11.0])


@pytest.mark.parametrize("estimator", bridge.ESTIMATORS)
def test_value_vanishes_at_endpoint_steps(estimator):
    for gamma in (0.0, 1.0):
        est = bridge.value_function_mc(0.1, 0.3, flat(0.4), flat(2.0), gamma, 1.0, 100, 10, 0, estimator)
        assert est.mean == 0.0
    est = bridge.value_function_mc(0.1, 0.3, flat(0.4), flat(0.0), 0.5, 1.0, 100, 10, 0, estimator)
    assert est.mean == 0.0


def test_value_constant_score_closed_form():
    a, t = 2.0, 0.3
    for sigma in (1.0, 0.7):
        closed = sigma**2 * a * a * (1.0 - t) / 8.0
        for k, est in enumerate(bridge.ESTIMATORS):
            v = bridge.value_function_mc(0.0, t, flat(0.3), flat(a), 0.5, sigma, 10_000, 100, 10 + k, est)
            assert abs(v.mean - closed) <= 3 * v.std_err + 1e-12, (sigma, est, v)


def test_value_estimators_agree():
    tg, zg = np.linspace(0.0, 0.99, 100), np.linspace(-4.0, 4.0, 81)
    base = DriftField(tg, zg, np.tile(-zg, (tg.size, 1)))
    ratio = DriftField(tg, zg, np.tile(1.5 * np.tanh(zg), (tg.size, 1)))
    est = {e: bridge.value_function_mc(0.5, 0.2, base, ratio, 0.5, 1.0, 20_000, 100, 31, e) for e in bridge.ESTIMATORS}
    assert all(e.mean >= 0.0 for e in est.values())
    fk = est["feynman_kac"]
    for name in ("killed", "girsanov"):
        other = est[name]
        assert abs(fk.mean - other.mean) <= 3 * math.hypot(fk.std_err, other.std_err), name


def test_value_error_scaling():
    tg, zg = np.linspace(0.0, 0.99, 100), np.linspace(-4.0, 4.0, 81)
    ratio = DriftField(tg, zg, np.tile(2.0 * np.tanh(zg), (tg.size, 1)))
    ns = np.array([100, 1000, 10000])
    errs = [bridge.value_function_mc(0.2, 0.1, flat(0.0, tg, zg), ratio, 0.5, 1.0, int(n), 50, 7).std_err for n in ns]
    slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert abs(slope + 0.5) < 0.1


def test_value_argument_checks():
    with pytest.raises(ParameterError):
        bridge.value_function_mc(0.0, 0.3, flat(0.0), flat(1.0), 0.5, estimator="exact")
    with pytest.raises(ParameterError):
        bridge.value_function_mc(0.0, 0.3, flat(0.0), flat(1.0), 1.5)
    with pytest.raises(ParameterError):
        bridge.value_function_mc(0.0, 1.0, flat(0.0), flat(1.0), 0.5)


def test_value_grid_matches_pointwise_estimates():
    a = 1.2
    t_nodes, z_nodes = np.array([0.2, 0.6]), np.linspace(-1.0, 1.0, 3)
    V, se = bridge.value_function_grid(t_nodes, z_nodes, flat(0.0), flat(a), 0.5, 1.0, 4000, 0.01, seed=3)
    closed = a * a * (1.0 - t_nodes) / 8.0
    assert np.allclose(V, closed[:, None], atol=1e-12)
    assert np.all(se < 1e-12)
    V0, _ = bridge.value_function_grid(t_nodes, z_nodes, flat(0.0), flat(a), 1.0)
    assert np.array_equal(V0, np.zeros((2, 3)))


def test_gamma_ipf_drift_endpoints():
    v, r, gv = flat(0.3), flat(-1.0), flat(5.0)
    assert np.allclose(bridge.gamma_ipf_drift(v, r, 1.0, gv, 0.5).values, 0.3 - 0.25)
    assert np.allclose(bridge.gamma_ipf_drift(v, r, 0.0, gv).values, 0.3)
    assert np.allclose(bridge.gamma_ipf_drift(v, r, 0.5, gv).values, 0.3 - 0.5 - 5.0)


def test_resample_field_is_exact_for_bilinear():
    t_nodes, z_nodes = np.linspace(0.1, 0.9, 5), np.linspace(-2, 2, 9)
    vals = 2.0 * t_nodes[:, None] - 0.5 * z_nodes[None, :]
    t, z = np.linspace(0.1, 0.9, 17), np.linspace(-2, 2, 33)
    assert np.allclose(bridge.resample_field(vals, t_nodes, z_nodes, t, z), 2.0 * t[:, None] - 0.5 * z[None, :], atol=1e-13)


def test_gamma_ipf_step_structure(small):
    problem, _ = small
    t = np.linspace(0.05, 0.95, 19)
    g = np.zeros(problem.grid.size)
    step0 = bridge.gamma_ipf_step(problem, g, 0.0, t, n_t_nodes=4, n_z_nodes=9, n_samples=50)
    assert np.array_equal(step0.g_next, g)
    assert np.allclose(step0.drift.values, bridge.lift_drift(g, problem, t).values)
    assert np.all(step0.value == 0.0)
    step1 = bridge.gamma_ipf_step(problem, g, 1.0, t, n_t_nodes=4, n_z_nodes=9, n_samples=50)
    assert np.allclose(step1.g_next, sinkhorn.classical_step(g, problem.reference()))
    pi1 = sinkhorn.coupling_from_g(step1.g_next, problem.reference()).density()
    assert np.allclose(step1.target_masses(), pi1.sum(axis=0), atol=1e-14)
    assert step1.target_masses().sum() == pytest.approx(1.0)
