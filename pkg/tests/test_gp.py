import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsakit.core import DegenerateError, InputError
from gsakit.gp import (GpModel, Kernel, ReplicatedData, _Likelihood, fit_gp,
                       fit_variance_surrogate, kernel_eval, kernel_matrix, log_likelihood,
                       log_variance_bias, predict, stochastic_kriging_noise)
from gsakit.sampling import lhs_sample, make_rng
from gsakit.testbed import sine_mean, sine_noise_variance


# --- dense textbook reference -----------------------------------------------------

def se_cov(x1, x2, sf2, ls):
    return sf2 * np.exp(-0.5 * ((x1[:, None] - x2[None, :]) / ls) ** 2)


def matern_cov(x1, x2, sf2, ls):
    r = np.abs(x1[:, None] - x2[None, :]) / ls
    return sf2 * (1 + math.sqrt(5) * r + 5 * r ** 2 / 3) * np.exp(-math.sqrt(5) * r)


def dense_posterior(x, y, xs, cov, sf2, ls, mu, tau):
    """Posterior mean and variance by explicit inverse of the covariance."""
    C = cov(x, x, sf2, ls) + np.diag(tau)
    Ci = np.linalg.inv(C)
    k = cov(xs, x, sf2, ls)
    mean = mu + k @ Ci @ (y - mu)
    var = sf2 - np.einsum("ij,jk,ik->i", k, Ci, k)
    return mean, var


def concentrated_loglik_1d(x, y, ls):
    """Zero-noise SE likelihood with GLS trend and profiled process variance."""
    R = se_cov(x, x, 1.0, ls) + 1e-10 * np.eye(x.size)
    Ri = np.linalg.inv(R)
    one = np.ones(x.size)
    mu = (one @ Ri @ y) / (one @ Ri @ one)
    r = y - mu
    s2 = r @ Ri @ r / x.size
    return -0.5 * x.size * math.log(s2) - 0.5 * np.linalg.slogdet(R)[1]


def fig4_data(sites=100, reps=20, seed=0):
    X = np.linspace(0.0, 6.0, sites).reshape(-1, 1)
    rng = make_rng(seed, 3)
    Y = sine_mean(X)[:, None] + np.sqrt(sine_noise_variance(X))[:, None] * rng.standard_normal((sites, reps))
    return X, Y


# --- kernels ---------------------------------------------------------------------

def test_kernel_values():
    se = Kernel("squared_exponential", 1.0, [1.0])
    assert kernel_eval(se, [0.3], [0.3]) == 1.0
    assert kernel_eval(se, [0.0], [1.0]) == pytest.approx(math.exp(-0.5))
    m = Kernel("matern52", 2.5, [0.7, 1.3])
    assert kernel_eval(m, [1.0, 2.0], [1.0, 2.0]) == 2.5
    r = math.hypot(0.5 / 0.7, 0.2 / 1.3)
    expected = 2.5 * (1 + math.sqrt(5) * r + 5 * r * r / 3) * math.exp(-math.sqrt(5) * r)
    assert kernel_eval(m, [0.5, 0.2], [0.0, 0.0]) == pytest.approx(expected)


@pytest.mark.parametrize("kind", ["squared_exponential", "matern52"])
def test_kernel_decays_monotonically(kind):
    k = Kernel(kind, 1.0, [0.5])
    vals = [kernel_eval(k, [0.0], [t]) for t in np.linspace(0, 20, 200)]
    assert np.all(np.diff(vals) <= 0)
    assert vals[-1] < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["squared_exponential", "matern52"]))
def test_kernel_matrix_symmetric_psd(seed, kind):
    rng = np.random.default_rng(seed)
    X = rng.random((15, 3))
    K = kernel_matrix(Kernel(kind, 1.7, rng.uniform(0.2, 2, 3)), X, X)
    np.testing.assert_allclose(K, K.T, atol=1e-15)
    assert np.linalg.eigvalsh(K)[0] > -1e-10


def test_kernel_validation():
    with pytest.raises(InputError):
        Kernel("rbf", 1.0, [1.0])
    with pytest.raises(InputError):
        Kernel("matern52", -1.0, [1.0])
    with pytest.raises(InputError):
        kernel_matrix(Kernel("matern52", 1.0, [1.0]), np.zeros((2, 2)), np.zeros((2, 2)))


# --- likelihood --------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["squared_exponential", "matern52"])
@pytest.mark.parametrize("mode", ["zero", "constant", "fixed"])
def test_likelihood_gradient(kind, mode):
    rng = np.random.default_rng(1)
    X = rng.random((12, 2))
    y = np.sin(4 * X[:, 0]) + X[:, 1] + 0.05 * rng.standard_normal(12)
    tau = np.full(12, 0.01) if mode == "fixed" else None
    lik = _Likelihood(X, y, kind, mode, tau)
    theta = np.log([0.4, 0.8] + ([] if mode == "zero" else [0.05 if mode == "constant" else 1.2]))
    _, g = lik(theta)
    h = 1e-6
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        fd = (lik(theta + e, grad=False)[0] - lik(theta - e, grad=False)[0]) / (2 * h)
        assert g[j] == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_symmetric_two_points_trend_is_mean():
    m = fit_gp([[0.0], [1.0]], [1.0, 3.0], noise="zero", restarts=3)
    assert m.trend == pytest.approx(2.0, abs=1e-12)


def test_lengthscale_recovery_against_grid_oracle():
    ls_true = 0.5
    x = np.linspace(0, 5, 60)
    K = se_cov(x, x, 1.0, ls_true) + 1e-8 * np.eye(60)
    y = np.linalg.cholesky(K) @ make_rng(4).standard_normal(60)
    grid = np.exp(np.linspace(math.log(0.05), math.log(5), 400))
    ll = [concentrated_loglik_1d(x, y, g) for g in grid]
    ls_grid = grid[int(np.argmax(ll))]
    m = fit_gp(x[:, None], y, noise="zero", kernel="squared_exponential", restarts=5)
    ls_fit = m.kernel.lengthscales[0]
    assert abs(math.log(ls_fit) - math.log(ls_true)) <= 0.5
    assert abs(math.log(ls_fit) - math.log(ls_grid)) <= 0.05


def test_fit_is_deterministic():
    X = lhs_sample(15, 2, 1).points
    y = np.sin(3 * X[:, 0]) * X[:, 1]
    a = fit_gp(X, y, noise="constant", seed=3)
    b = fit_gp(X, y, noise="constant", seed=3)
    assert a.to_json() == b.to_json()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_loglik_invariant_under_row_order(seed):
    rng = np.random.default_rng(seed)
    X = rng.random((20, 2))
    y = np.cos(3 * X[:, 0]) + X[:, 1] ** 2
    k = Kernel("matern52", 0.8, [0.3, 0.6])
    tau = rng.uniform(0, 0.01, 20)
    perm = rng.permutation(20)
    a = GpModel(k, 0.2, X, y, tau)
    b = GpModel(k, 0.2, X[perm], y[perm], tau[perm])
    assert log_likelihood(a) == pytest.approx(log_likelihood(b), abs=1e-8)
    lik_a = _Likelihood(X, y, "matern52", "constant")
    lik_b = _Likelihood(X[perm], y[perm], "matern52", "constant")
    theta = np.log([0.3, 0.6, 1e-3])
    assert lik_a(theta, grad=False)[0] == pytest.approx(lik_b(theta, grad=False)[0], abs=1e-8)


def test_fit_errors():
    with pytest.raises(DegenerateError):
        fit_gp([[0.0], [1.0], [2.0]], [1.0, 1.0, 1.0])
    with pytest.raises(InputError):
        fit_gp([[0.0], [0.0], [1.0]], [1.0, 2.0, 3.0], noise="zero")
    with pytest.raises(InputError):
        fit_gp([[0.0], [1.0]], [1.0, np.nan])
    with pytest.raises(InputError):
        fit_gp([[0.0], [1.0]], [1.0, 2.0], noise=[-1.0, 0.0])
    with pytest.raises(InputError):
        fit_gp([[0.0], [1.0]], [1.0, 2.0], noise="white")


# --- prediction ------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["squared_exponential", "matern52"])
def test_interpolation_and_nonnegative_variance(kind):
    x = np.linspace(0, 1, 20)[:, None]
    y = np.sin(2 * np.pi * x[:, 0]) + 2.0
    m = fit_gp(x, y, noise="zero", kernel=kind, seed=1)
    p = predict(m, x)
    assert np.max(np.abs(p.mean - y) / np.abs(y)) <= 1e-6
    assert np.all(p.var <= 1e-8 * m.kernel.process_variance + 1e-12)
    probe = predict(m, np.linspace(-0.5, 1.5, 1000)[:, None])
    assert np.all(probe.var >= 0)


def test_far_away_reverts_to_prior():
    tau = np.full(10, 0.02)
    x = np.linspace(0, 1, 10)[:, None]
    m = GpModel(Kernel("squared_exponential", 1.3, [0.2]), 0.7, x, np.sin(x[:, 0]), tau, nugget=0.02)
    p = predict(m, [[100.0]])
    assert p.mean[0] == pytest.approx(0.7, abs=1e-12)
    assert p.var[0] == pytest.approx(1.3 + 0.02, abs=1e-12)
    assert p.noise_var[0] == 0.02
    p2 = predict(m, [[100.0]], noise_model=lambda X: 0.5 * np.ones(len(X)))
    assert p2.var[0] == pytest.approx(1.8)


@pytest.mark.parametrize("kind,cov", [("squared_exponential", se_cov), ("matern52", matern_cov)])
def test_prediction_matches_dense_formulas(kind, cov):
    X, Y = fig4_data(40, 10)
    sk = stochastic_kriging_noise(ReplicatedData.from_matrix(X, Y))
    m = fit_gp(X, sk.mean_outputs, noise=sk.mean_noise, kernel=kind, seed=2)
    xs = np.array([3.0, 0.1, 5.9])
    mean, var = dense_posterior(X[:, 0], sk.mean_outputs, xs, cov, m.kernel.process_variance,
                                m.kernel.lengthscales[0], m.trend, sk.mean_noise)
    p = predict(m, xs[:, None])
    np.testing.assert_allclose(p.mean, mean, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(p.var, var, rtol=1e-6, atol=1e-10)


def test_posterior_mean_is_linear_in_outputs():
    rng = np.random.default_rng(0)
    X = rng.random((25, 2))
    m1 = GpModel(Kernel("matern52", 1.0, [0.3, 0.5]), 0.0, X, rng.standard_normal(25), 0.01)
    y2 = rng.standard_normal(25)
    m2 = m1.with_outputs(y2)
    m12 = m1.with_outputs(m1.outputs + y2)
    Xs = rng.random((50, 2))
    np.testing.assert_allclose(predict(m12, Xs).mean, predict(m1, Xs).mean + predict(m2, Xs).mean,
                               atol=1e-10)


def test_model_json_round_trip():
    X = lhs_sample(12, 1, 0).points
    m = fit_gp(X, np.sin(5 * X[:, 0]), noise="constant")
    back = GpModel.from_json(m.to_json())
    np.testing.assert_array_equal(predict(back, X).mean, predict(m, X).mean)


def test_jitter_rescues_duplicate_points():
    X = np.array([[0.0], [0.0], [1.0]])
    m = GpModel(Kernel("squared_exponential", 1.0, [1.0]), 0.0, X, [1.0, 1.0, 2.0], 0.0)
    assert m.jitter > 0
    assert np.isfinite(predict(m, [[0.5]]).mean[0])


# --- stochastic kriging ----------------------------------------------------------------

def test_sk_hand_cases():
    sk = stochastic_kriging_noise(ReplicatedData(np.array([[0.0], [1.0]]), ([3.0, 3.0, 3.0], [0.0, 2.0])))
    np.testing.assert_allclose(sk.mean_outputs, [3.0, 1.0])
    np.testing.assert_allclose(sk.noise_estimates, [0.0, 2.0])
    np.testing.assert_allclose(sk.mean_noise, [0.0, 1.0])


def test_sk_chi_square_spread():
    rng = np.random.default_rng(7)
    X = np.arange(200.0)[:, None]
    Y = 0.5 * rng.standard_normal((200, 50))
    sk = stochastic_kriging_noise(ReplicatedData.from_matrix(X, Y))
    bound = 3 * 0.25 * math.sqrt(2 / 49)
    # each estimate is 0.25 chi2_49 / 49; the 3-sd band should hold for nearly all sites
    assert np.mean(np.abs(sk.noise_estimates - 0.25) <= bound) >= 0.99
    assert sk.noise_estimates.mean() == pytest.approx(0.25, abs=3 * 0.25 * math.sqrt(2 / 49) / math.sqrt(200))


def test_sk_errors():
    with pytest.raises(InputError):
        stochastic_kriging_noise(ReplicatedData(np.array([[0.0]]), ([1.0],)))
    with pytest.raises(InputError):
        ReplicatedData(np.array([[0.0], [0.0]]), ([1.0, 2.0], [1.0, 2.0]))


def test_log_variance_bias_matches_simulation():
    rng = np.random.default_rng(2)
    s2 = rng.standard_normal((200_000, 5)).var(axis=1, ddof=1)
    assert log_variance_bias([5])[0] == pytest.approx(np.log(s2).mean(), abs=0.01)


def test_variance_surrogate_constant_noise():
    rng = np.random.default_rng(3)
    X = np.linspace(0, 6, 40)[:, None]
    Y = 1.0 + math.sqrt(0.3) * rng.standard_normal((40, 20))
    sk = stochastic_kriging_noise(ReplicatedData.from_matrix(X, Y))
    vm = fit_variance_surrogate(X, sk.noise_estimates, sk.counts, sk.mean_outputs)
    tau = vm(np.linspace(0, 6, 101)[:, None])
    assert np.all(np.abs(tau / 0.3 - 1) <= 0.1)


def test_variance_surrogate_flat_and_floor():
    X = np.linspace(0, 1, 10)[:, None]
    vm = fit_variance_surrogate(X, np.full(10, 0.2))
    np.testing.assert_allclose(vm(X), 0.2, rtol=1e-9)
    est = np.linspace(0.1, 1.0, 10)
    est[3] = 0.0
    vm = fit_variance_surrogate(X, est, mean_outputs=np.linspace(0, 5, 10))
    assert np.all(np.isfinite(vm(X))) and np.all(vm(X) > 0)


def test_fig4_variance_recovery():
    X, Y = fig4_data(100, 20)
    sk = stochastic_kriging_noise(ReplicatedData.from_matrix(X, Y))
    vm = fit_variance_surrogate(X, sk.noise_estimates, sk.counts, sk.mean_outputs)
    grid = np.linspace(0, 6, 601)[:, None]
    assert np.corrcoef(vm(grid), sine_noise_variance(grid))[0, 1] >= 0.9
    m = fit_gp(X, sk.mean_outputs, noise=sk.mean_noise)
    assert np.max(np.abs(predict(m, grid).mean - np.sin(grid[:, 0]))) < 0.15
