import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsakit.core import DegenerateError, InputError, InputSpec
from gsakit.shapley import (GameSpec, ShapleyConfig, castro_shapley, estimate_shapley,
                            exact_shapley, nu2_estimate, permutation_shapley, sample_permutations)
from gsakit.sobol import EstimatorOptions, sobol_indices
from gsakit.testbed import ishigami, linear_gaussian

from oracles import linear_gaussian_nu1, linear_gaussian_shapley_2d, shapley_by_enumeration


def glove(s):
    return 1.0 if 2 in s and (0 in s or 1 in s) else 0.0


def random_game(d, seed):
    rng = np.random.default_rng(seed)
    table = {frozenset(c): float(rng.normal())
             for r in range(1, d + 1) for c in itertools.combinations(range(d), r)}
    table[frozenset()] = 0.0
    return table


# --- exact game values ------------------------------------------------------------

def test_symmetric_two_player():
    g = GameSpec.from_table(2, {(0,): 0.5, (1,): 0.5, (0, 1): 1.0})
    np.testing.assert_allclose(exact_shapley(g), [0.5, 0.5])


def test_dummy_player():
    g = GameSpec.from_table(2, {(0,): 1.0, (1,): 0.0, (0, 1): 1.0})
    np.testing.assert_allclose(exact_shapley(g), [1.0, 0.0])


def test_glove_game():
    oracle = shapley_by_enumeration(3, glove)
    np.testing.assert_allclose(oracle, [1 / 6, 1 / 6, 2 / 3])
    g = GameSpec(3, glove)
    np.testing.assert_allclose(exact_shapley(g), oracle, atol=1e-15)
    np.testing.assert_allclose(permutation_shapley(g), oracle, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_exact_equals_permutation_form(d, seed):
    table = random_game(d, seed)
    g = GameSpec(d, lambda s: table[frozenset(s)])
    phi = exact_shapley(g)
    np.testing.assert_allclose(permutation_shapley(g), phi, atol=1e-12, rtol=0)
    np.testing.assert_allclose(shapley_by_enumeration(d, lambda s: table[s]), phi, atol=1e-12)
    # efficiency
    assert phi.sum() == pytest.approx(table[frozenset(range(d))], abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_castro_with_all_permutations_is_exact(d, seed):
    table = random_game(d, seed)
    g = GameSpec(d, lambda s: table[frozenset(s)])
    castro = castro_shapley(g, itertools.permutations(range(d)))
    np.testing.assert_allclose(castro, permutation_shapley(g), atol=1e-12, rtol=0)
    np.testing.assert_allclose(castro, exact_shapley(g), atol=1e-12, rtol=0)


def test_castro_random_permutations_converge():
    table = random_game(4, 3)
    g = GameSpec(4, lambda s: table[frozenset(s)])
    approx = castro_shapley(g, sample_permutations(4, 4000, seed=1))
    np.testing.assert_allclose(approx, exact_shapley(g), atol=0.1)
    assert approx.sum() == pytest.approx(table[frozenset(range(4))], abs=1e-12)


def test_sample_permutations_are_permutations():
    P = sample_permutations(5, 200, seed=2)
    assert P.shape == (200, 5)
    assert np.all(np.sort(P, axis=1) == np.arange(5))
    np.testing.assert_array_equal(P, sample_permutations(5, 200, seed=2))


def test_game_errors():
    with pytest.raises(InputError):
        exact_shapley(GameSpec(2, lambda s: 1.0))
    with pytest.raises(InputError):
        castro_shapley(GameSpec(2, glove), [])


# --- nu2 ----------------------------------------------------------------------------

def test_nu2_independent_additive():
    m = linear_gaussian(1.0, 2.0, 0.0)
    cfg = ShapleyConfig(n_outer=20_000, n_inner=3, seed=1)
    assert nu2_estimate(m.func, m.input_spec, [0], cfg, v_y=5.0) == pytest.approx(0.2, abs=0.01)


def test_nu2_correlated_closed_form():
    m = linear_gaussian(1.0, 1.0, 0.5)
    cfg = ShapleyConfig(n_outer=40_000, n_inner=3, seed=2)
    # E[V(Y | X2)] = (1 - rho^2) sigma1^2 = 0.75 and V(Y) = 3
    assert nu2_estimate(m.func, m.input_spec, [0], cfg, v_y=3.0) == pytest.approx(0.25, abs=0.01)


def test_nu2_constant_model_is_zero():
    m = ishigami()
    cfg = ShapleyConfig(n_outer=50, n_inner=4)
    assert nu2_estimate(lambda X: np.full(X.shape[0], 2.0), m.input_spec, [1], cfg, 1.0) == 0.0


def test_nu2_errors():
    m = ishigami()
    cfg = ShapleyConfig()
    with pytest.raises(InputError):
        nu2_estimate(m.func, m.input_spec, [0, 1, 2], cfg, 1.0)
    with pytest.raises(DegenerateError):
        nu2_estimate(m.func, m.input_spec, [0], cfg, 0.0)
    with pytest.raises(InputError):
        ShapleyConfig(n_inner=1)


# --- Monte Carlo Shapley effects ----------------------------------------------------

@pytest.mark.parametrize("rho", [-0.6, 0.0, 0.3, 0.9])
def test_equal_sigma_is_symmetric(rho):
    m = linear_gaussian(1.5, 1.5, rho)
    est = estimate_shapley(m.func, m.input_spec, ShapleyConfig(m_permutations=2000, seed=5))
    assert np.all(np.abs(est.phi - 0.5) <= 3 * est.std_error)
    assert est.phi.sum() == pytest.approx(1.0, abs=1e-12)


def test_unequal_sigma_matches_derived_closed_form():
    phi1 = linear_gaussian_shapley_2d(1.0, 2.0, 0.5)
    assert phi1 == pytest.approx(0.5 - 2.25 / 14)
    m = linear_gaussian(1.0, 2.0, 0.5)
    assert m.analytic.shapley[0] == pytest.approx(phi1, abs=1e-15)
    # exact Shapley on the analytic nu1 game agrees with the closed form
    nu = lambda s: linear_gaussian_nu1([1.0, 2.0], [[1, 0.5], [0.5, 1]], [1, 1], s)
    assert exact_shapley(GameSpec(2, nu))[0] == pytest.approx(phi1, abs=1e-14)
    est = estimate_shapley(m.func, m.input_spec, ShapleyConfig(m_permutations=10_000, seed=0))
    assert est.phi[0] == pytest.approx(phi1, abs=0.02)


def test_three_factor_correlated_linear_model():
    sigma = np.array([1.0, 2.0, 0.5])
    corr = np.array([[1.0, 0.4, -0.3], [0.4, 1.0, 0.2], [-0.3, 0.2, 1.0]])
    coef = np.array([1.0, -0.5, 2.0])
    nu = lambda s: linear_gaussian_nu1(sigma, corr, coef, s)
    oracle = exact_shapley(GameSpec(3, nu))
    spec = InputSpec.gaussian(np.zeros(3), corr * np.outer(sigma, sigma))
    est = estimate_shapley(lambda X: X @ coef, spec, ShapleyConfig(m_permutations=6000, seed=3))
    assert np.all(np.abs(est.phi - oracle) <= 4 * est.std_error + 0.01)


def test_ishigami_bracketed_by_sobol_indices():
    m = ishigami()
    est = estimate_shapley(m.func, m.input_spec, ShapleyConfig(m_permutations=4000, seed=1))
    t = sobol_indices(m.func, m.input_spec, 5000, opts=EstimatorOptions(R=200))
    tol = 3 * est.std_error + 3 * np.maximum(t.column("Si", "std_error"), t.column("Ti", "std_error"))
    assert est.phi.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(est.phi >= t.Si - tol)
    assert np.all(est.phi <= t.Ti + tol)


def test_estimate_is_deterministic_and_serializes():
    m = linear_gaussian(1.0, 1.0, 0.5)
    cfg = ShapleyConfig(m_permutations=100, seed=8)
    a = estimate_shapley(m.func, m.input_spec, cfg)
    b = estimate_shapley(m.func, m.input_spec, cfg)
    np.testing.assert_array_equal(a.phi, b.phi)
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0] == "parameter,shapley,std.error"
    doc = json.loads(a.to_json())
    assert [r["parameter"] for r in doc["results"]] == ["x1", "x2"]
    assert "Shapley effects" in a.to_text()


def test_constant_model_is_degenerate():
    m = ishigami()
    with pytest.raises(DegenerateError):
        estimate_shapley(lambda X: np.zeros(X.shape[0]), m.input_spec, ShapleyConfig(m_permutations=5))


def test_single_factor():
    from gsakit.core import Uniform
    spec = InputSpec.independent([Uniform(0, 1)])
    est = estimate_shapley(lambda X: X[:, 0] ** 2, spec, ShapleyConfig(m_permutations=3))
    np.testing.assert_array_equal(est.phi, [1.0])
