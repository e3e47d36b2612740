import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import frozen as F
from sinkflow import instances, sinkhorn
from sinkflow.measures import CostMatrix, DiscreteMeasure, ParameterError, StructureError, kl_divergence
from sinkflow.sinkhorn import SolverConfig, StepSchedule

G_STAR = np.array(F.ASYM_G_STAR)


def _solve(ref, gamma=1.0, tol=1e-12, max_iter=1000, **kw):
    return sinkhorn.solve_reference(ref, SolverConfig(StepSchedule.constant(gamma), max_iter, tol, **kw))


def _fixed_point(ref, n=400):
    g = np.zeros(ref.shape[1])
    for _ in range(n):
        g = sinkhorn.classical_step(g, ref)
    return sinkhorn.gauge_fix(g, ref)


def test_f_from_g(sym, asym):
    assert np.allclose(sinkhorn.f_from_g(np.zeros(2), sym), 0.0, atol=1e-15)
    assert np.allclose(sinkhorn.f_from_g(np.zeros(2), asym), F.ASYM_F_AT_ZERO, atol=1e-14)
    g = np.array([0.3, -1.1])
    assert np.allclose(sinkhorn.f_from_g(g + 2.5, asym), sinkhorn.f_from_g(g, asym) - 2.5, atol=1e-14)


def test_f_from_g_rejects_bad_input(asym):
    with pytest.raises(ParameterError):
        sinkhorn.f_from_g(np.array([0.0, np.nan]), asym)
    with pytest.raises(StructureError):
        sinkhorn.f_from_g(np.zeros(3), asym)


def test_coupling_from_g(sym, asym):
    assert np.allclose(sinkhorn.coupling_from_g(np.zeros(2), sym).log_density, sym.log_density, atol=1e-15)
    g = np.array([0.4, -0.9])
    a = sinkhorn.coupling_from_g(g, asym).log_density
    assert np.allclose(a, sinkhorn.coupling_from_g(g + 7.0, asym).log_density, atol=1e-12)
    assert np.allclose(np.exp(a).sum(axis=1), [0.3, 0.7], atol=1e-12)
    assert np.exp(a).sum() == pytest.approx(1.0, abs=1e-10)
    pi_star = np.exp(sinkhorn.coupling_from_g(G_STAR, asym).log_density)
    assert np.allclose(pi_star.sum(axis=0), [0.6, 0.4], atol=1e-8)
    assert np.allclose(pi_star.ravel(), F.ASYM_PI_STAR, atol=1e-14)


def test_objective(sym, asym):
    assert sinkhorn.objective(np.zeros(2), sym) == 0.0
    assert sinkhorn.objective(np.zeros(2), asym) == pytest.approx(F.ASYM_OBJECTIVE_AT_ZERO, abs=1e-15)
    assert sinkhorn.objective(G_STAR, asym) < 1e-12


def test_classical_step(sym, asym):
    assert np.array_equal(sinkhorn.classical_step(np.zeros(2), sym), np.zeros(2))
    assert np.allclose(sinkhorn.classical_step(np.zeros(2), asym), -np.array(F.ASYM_FIRST_VARIATION_AT_ZERO), atol=1e-14)
    twice = sinkhorn.classical_step(sinkhorn.classical_step(G_STAR, asym), asym)
    assert np.allclose(twice, G_STAR, atol=1e-12)


def test_gamma_step_dual(asym, rng):
    g = rng.normal(size=2)
    assert np.array_equal(sinkhorn.gamma_step_dual(g, 1.0, asym), sinkhorn.classical_step(g, asym))
    # the recursion is affine in gamma
    for gamma in (1e-6, 0.3):
        slope = (sinkhorn.gamma_step_dual(g, gamma, asym) - g) / gamma
        assert np.allclose(slope, -sinkhorn.first_variation(g, asym), atol=1e-9)
    half = sinkhorn.gamma_step_dual(np.zeros(2), 0.5, asym)
    assert np.allclose(half, -0.5 * np.array(F.ASYM_FIRST_VARIATION_AT_ZERO), atol=1e-14)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ParameterError):
            sinkhorn.gamma_step_dual(g, bad, asym)


def test_gamma_step_primal(asym, rng):
    g = rng.normal(size=2)
    pi = sinkhorn.coupling_from_g(g, asym)
    assert np.allclose(sinkhorn.gamma_step_primal(pi, 0.0, asym).log_density, pi.log_density, atol=1e-14)
    for gamma in (0.5, 1.0):
        primal = sinkhorn.gamma_step_primal(pi, gamma, asym).log_density
        dual = sinkhorn.coupling_from_g(sinkhorn.gamma_step_dual(g, gamma, asym), asym).log_density
        assert np.max(np.abs(primal - dual)) < 1e-10
    # unit step is the Y-projection followed by the X-projection
    p = pi.density()
    p = p * (np.array([0.6, 0.4]) / p.sum(axis=0))[None, :]
    p = p * (np.array([0.3, 0.7]) / p.sum(axis=1))[:, None]
    assert np.allclose(sinkhorn.gamma_step_primal(pi, 1.0, asym).density(), p, atol=1e-14)


def test_gamma_step_primal_rejects_wrong_marginal(asym):
    from sinkflow.measures import Coupling

    with pytest.raises(ParameterError):
        sinkhorn.gamma_step_primal(Coupling(np.log(np.full((2, 2), 0.25))), 0.5, asym)


def test_solve_symmetric_converges_immediately(sym):
    res = _solve(sym)
    assert res.converged and res.n_iter == 0 and len(res.trace) == 1


def test_solve_matches_bisection_oracle(asym):
    # the stopping rule is on the objective, which is quadratic in the error of g
    for gamma in (1.0, 0.5):
        res = _solve(asym, gamma, tol=1e-12)
        assert res.converged and res.trace[-1].objective < 1e-12
        assert np.max(np.abs(res.potentials.g - G_STAR)) < 1e-5
    assert _solve(asym, 0.5).n_iter > _solve(asym, 1.0).n_iter
    assert np.max(np.abs(_fixed_point(asym) - G_STAR)) < 1e-8


def test_solve_gauge_and_trace(asym):
    res = _solve(asym, 0.5, record_every=5)
    assert float(np.dot([0.6, 0.4], res.potentials.g)) == pytest.approx(0.0, abs=1e-15)
    iters = [r.iter for r in res.trace]
    assert iters[0] == 0 and all(i % 5 == 0 for i in iters[:-1]) and iters[-1] == res.n_iter
    assert all(r.marginal_err_x <= 1e-10 for r in res.trace)
    assert all(r.breg_to_opt is not None and r.breg_to_opt >= 0 for r in res.trace)
    # measured against the stopped iterate, whose error in g is about 1e-6
    assert res.trace[0].breg_to_opt == pytest.approx(F.ASYM_KL_STAR_TO_PI0, abs=1e-5)
    pot, trace = res
    assert pot is res.potentials and trace is res.trace


def test_solve_flags_max_iter(asym):
    res = _solve(asym, 0.05, max_iter=3)
    assert not res.converged and res.status == "max_iter" and res.n_iter == 3
    assert all(r.breg_to_opt is None for r in res.trace)


def test_solve_wrapper():
    pot, trace = sinkhorn.solve(
        DiscreteMeasure(np.array([0.3, 0.7])), DiscreteMeasure(np.array([0.6, 0.4])),
        CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]])), 0.5, SolverConfig(tol=1e-12),
    )
    assert np.max(np.abs(pot.g - G_STAR)) < 1e-5


def test_bregman_dual(asym, rng):
    g = rng.normal(size=2)
    assert sinkhorn.bregman_dual(g, g, asym) == 0.0
    assert sinkhorn.bregman_dual(np.zeros(2), G_STAR, asym) == pytest.approx(F.ASYM_KL_STAR_TO_PI0, abs=1e-14)
    assert sinkhorn.bregman_dual(G_STAR, np.zeros(2), asym) == pytest.approx(F.ASYM_KL_PI0_TO_STAR, abs=1e-14)
    h = rng.normal(size=2)
    base = sinkhorn.bregman_dual(g, h, asym)
    assert sinkhorn.bregman_dual(g + 3.0, h, asym) == pytest.approx(base, abs=1e-12)
    assert sinkhorn.bregman_dual(g, h - 1.7, asym) == pytest.approx(base, abs=1e-12)


def test_optimal_coupling_kl(asym):
    assert sinkhorn.optimal_coupling_kl(asym, _fixed_point(asym)) == pytest.approx(F.ASYM_KL_STAR_TO_REF, abs=1e-14)


def test_schedules():
    assert StepSchedule.constant(0.3).take(3).tolist() == [0.3, 0.3, 0.3]
    assert StepSchedule.harmonic(1.0, 1.0)(0) == 1.0 and StepSchedule.harmonic(1.0, 1.0)(3) == 0.25
    assert StepSchedule.inverse_sqrt(1.0, 1.0)(3) == pytest.approx(0.5)
    assert StepSchedule.harmonic().robbins_monro() is True
    assert StepSchedule.inverse_sqrt().robbins_monro() is False
    assert StepSchedule.constant(0.5).robbins_monro() is False
    assert StepSchedule("power", power=0.75).robbins_monro() is True
    assert StepSchedule.custom([0.5, 0.25]).robbins_monro() is None
    assert StepSchedule.custom([0.5, 0.25])(10) == 0.25
    with pytest.raises(ValueError):
        StepSchedule.constant(1.5)
    with pytest.raises(ValueError):
        StepSchedule.custom([0.5, 0.0])
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_dual_isometry_property(seed, gamma):
    r = np.random.default_rng(seed)
    ref = instances.random_instance(r, int(r.integers(2, 8)), int(r.integers(2, 8)), float(r.choice([0.1, 1.0])))
    ga, gb = r.normal(size=ref.shape[1]), r.normal(size=ref.shape[1])
    gb = sinkhorn.gamma_step_dual(gb, gamma, ref)
    kl = kl_divergence(sinkhorn.coupling_from_g(gb, ref), sinkhorn.coupling_from_g(ga, ref))
    assert abs(sinkhorn.bregman_dual(ga, gb, ref) - kl) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_step_decreases_objective(seed, gamma):
    r = np.random.default_rng(seed)
    ref = instances.random_instance(r, int(r.integers(2, 10)), int(r.integers(2, 10)), float(r.choice([0.1, 1.0])))
    g = r.normal(size=ref.shape[1])
    assert sinkhorn.objective(sinkhorn.gamma_step_dual(g, gamma, ref), ref) <= sinkhorn.objective(g, ref) + 1e-14
