import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import frozen as F
from sinkflow.measures import (
    CostMatrix,
    Coupling,
    DiscreteMeasure,
    ParameterError,
    StructureError,
    build_reference,
    kl_divergence,
    log_sum_exp,
    marginals,
    total_variation,
)

SWAP = [[0.0, 1.0], [1.0, 0.0]]


def test_symmetric_reference_has_uniform_rows(sym):
    p = np.exp(sym.log_density)
    assert np.allclose(p, p.T, atol=1e-15)
    assert np.allclose(p.sum(axis=1), [0.5, 0.5], atol=1e-15)


def test_asymmetric_reference_against_summation(asym):
    assert np.exp(asym.log_density).sum() == pytest.approx(1.0, abs=1e-15)
    assert asym.normalizer == pytest.approx(F.ASYM_NORMALIZER, abs=1e-14)
    assert np.allclose(asym.log_density.ravel(), F.ASYM_LOG_DENSITY, atol=1e-14)


def test_zero_cost_gives_product():
    mu, nu = DiscreteMeasure(np.array([0.2, 0.8])), DiscreteMeasure(np.array([0.1, 0.3, 0.6]))
    ref = build_reference(mu, nu, CostMatrix(np.zeros((2, 3))), 0.7)
    assert ref.normalizer == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(ref.log_density, np.log(mu.weights)[:, None] + np.log(nu.weights)[None, :], atol=1e-15)


def test_reference_is_read_only(asym):
    with pytest.raises(ValueError):
        asym.log_density[0, 0] = 0.0


def test_validation_errors():
    with pytest.raises(ParameterError):
        DiscreteMeasure(np.array([0.5, 0.6]))
    with pytest.raises(ParameterError):
        DiscreteMeasure(np.array([1.2, -0.2]))
    with pytest.raises(StructureError):
        DiscreteMeasure(np.array([]))
    with pytest.raises(ParameterError):
        DiscreteMeasure(np.array([0.5, 0.5]), support=[1.0, 0.0])
    with pytest.raises(ParameterError):
        CostMatrix(np.array([[0.0, np.inf]]))
    half = DiscreteMeasure(np.array([0.5, 0.5]))
    with pytest.raises(StructureError):
        build_reference(half, half, CostMatrix(np.zeros((2, 3))), 1.0)
    with pytest.raises(ParameterError):
        build_reference(half, half, CostMatrix(np.zeros((2, 2))), 0.0)
    with pytest.raises(ParameterError):
        build_reference(DiscreteMeasure(np.array([1.0, 0.0])), half, CostMatrix(np.zeros((2, 2))), 1.0)


def test_marginals_of_simple_couplings(asym):
    mu, nu = np.array([0.3, 0.7]), np.array([0.6, 0.4])
    px, py = marginals(Coupling(np.log(np.outer(mu, nu))))
    assert np.allclose(px.weights, mu) and np.allclose(py.weights, nu)
    with np.errstate(divide="ignore"):
        px, py = marginals(Coupling(np.log(np.diag([0.5, 0.5]))))
    assert np.allclose(px.weights, 0.5) and np.allclose(py.weights, 0.5)
    px, py = marginals(asym.coupling())
    p = np.exp(np.array(F.ASYM_LOG_DENSITY).reshape(2, 2))
    assert np.allclose(px.weights, p.sum(axis=1), atol=1e-15)
    assert np.allclose(py.weights, p.sum(axis=0), atol=1e-15)


def test_kl_values():
    assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    assert kl_divergence([0.6, 0.4], [0.5, 0.5]) == pytest.approx(0.6 * math.log(1.2) + 0.4 * math.log(0.8), abs=1e-15)
    assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf


def test_kl_coupling_matches_vector_form(asym, rng):
    p = rng.dirichlet(np.ones(4)).reshape(2, 2)
    assert kl_divergence(Coupling(np.log(p)), asym.coupling()) == pytest.approx(
        kl_divergence(p, np.exp(asym.log_density)), abs=1e-14
    )


def test_total_variation():
    assert total_variation([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert total_variation([0.3, 0.7], [0.3, 0.7]) == 0.0


def test_log_sum_exp_cases(rng):
    assert log_sum_exp(np.array([0.0, 0.0])) == pytest.approx(math.log(2), abs=1e-15)
    big = log_sum_exp(np.array([1000.0, 1000.0]))
    assert math.isfinite(big) and big == pytest.approx(1000 + math.log(2), abs=1e-12)
    v = rng.normal(size=10)
    assert log_sum_exp(v) == pytest.approx(math.log(sum(math.exp(x) for x in v)), abs=1e-12)
    assert log_sum_exp(np.array([-np.inf, -np.inf])) == -np.inf
    m = np.array([[0.0, -np.inf], [-np.inf, -np.inf]])
    assert np.array_equal(log_sum_exp(m, axis=1), [0.0, -np.inf])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.floats(-700, 700))
def test_log_sum_exp_shift_covariant(v, shift):
    v = np.array(v)
    assert log_sum_exp(v + shift) == pytest.approx(log_sum_exp(v) + shift, abs=1e-9)
