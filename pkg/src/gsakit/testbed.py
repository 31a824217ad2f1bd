"""Benchmark models with known sensitivity indices."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import InputError, InputSpec, Uniform
from .sampling import make_rng

ISHIGAMI_A = 7.0
ISHIGAMI_B = 0.1


@dataclass(frozen=True)
class AnalyticIndices:
    Si: np.ndarray
    Ti: np.ndarray
    var_y: float
    shapley: Optional[np.ndarray] = None


@dataclass(frozen=True)
class BenchmarkModel:
    name: str
    input_spec: InputSpec
    func: Callable[[np.ndarray], np.ndarray]
    analytic: Optional[AnalyticIndices] = None
    noise_variance: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def d(self) -> int:
        return self.input_spec.d

    @property
    def stochastic(self) -> bool:
        return self.noise_variance is not None

    def __call__(self, X, noise_seed: Optional[int] = None) -> np.ndarray:
        return eval_model(self, X, noise_seed)


def eval_model(m: BenchmarkModel, X, noise_seed: Optional[int] = None) -> np.ndarray:
    """Evaluate ``m`` row-wise on raw (already scaled) inputs ``X``.

    Stochastic models need ``noise_seed``; deterministic models ignore it.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != m.d:
        raise InputError(f"model {m.name!r} expects {m.d} columns, got array of shape {X.shape}")
    y = np.asarray(m.func(X), dtype=float)
    if m.noise_variance is not None:
        if noise_seed is None:
            raise InputError(f"model {m.name!r} is stochastic: pass noise_seed")
        sd = np.sqrt(m.noise_variance(X))
        y = y + sd * make_rng(noise_seed).standard_normal(y.shape[0])
    return y


def uniform_moment(q: int, a: float, b: float) -> float:
    """``E[X^q]`` for ``X ~ U(a, b)``."""
    if q < 0 or int(q) != q:
        raise InputError("moment order must be a nonnegative integer")
    if not a < b:
        raise InputError("uniform moment needs a < b")
    return (b ** (q + 1) - a ** (q + 1)) / ((q + 1) * (b - a))


# ---------------------------------------------------------------------------
# model functions
# ---------------------------------------------------------------------------

def polynomial_function(X):
    X = np.asarray(X, dtype=float)
    return 3.0 * X[:, 0] ** 2 + X[:, 1] * X[:, 2] - 2.0 * X[:, 3]


def ishigami_function(X, a: float = ISHIGAMI_A, b: float = ISHIGAMI_B):
    X = np.asarray(X, dtype=float)
    s1 = np.sin(X[:, 0])
    return s1 + a * np.sin(X[:, 1]) ** 2 + b * X[:, 2] ** 4 * s1


def ishigami_unit(U, a: float = ISHIGAMI_A, b: float = ISHIGAMI_B):
    """Ishigami on unit-cube inputs, scaled to ``[-pi, pi]^3`` internally."""
    return ishigami_function(2.0 * np.pi * np.asarray(U, dtype=float) - np.pi, a, b)


def ishigami_variance(a: float = ISHIGAMI_A, b: float = ISHIGAMI_B) -> float:
    pi = math.pi
    return a**2 / 8 + b * pi**4 / 5 + b**2 * pi**8 / 18 + 0.5


def _ishigami_analytic(a: float, b: float) -> AnalyticIndices:
    pi = math.pi
    v = ishigami_variance(a, b)
    v1 = 0.5 * (1 + b * pi**4 / 5) ** 2
    v2 = a**2 / 8
    v13 = b**2 * pi**8 * (1 / 18 - 1 / 50)
    return AnalyticIndices(np.array([v1, v2, 0.0]) / v,
                           np.array([v1 + v13, v2, v13]) / v, v)


# Table of published values; X2 and X3 entries treat x2*x3 as a pure interaction.
POLYNOMIAL_PUBLISHED = AnalyticIndices(np.array([0.677, 0.0, 0.0, 0.282]),
                                       np.array([0.677, 0.041, 0.041, 0.282]), 1.182)


def polynomial_exact_indices() -> AnalyticIndices:
    """Exact indices of ``3 x1^2 + x2 x3 - 2 x4`` on ``U(0, 1)^4``.

    ``x2 x3`` has main effects ``V(x2 / 2) = 1/48`` each plus an
    interaction, so X2 and X3 carry small nonzero first-order indices.
    """
    m1, m2, m4 = (uniform_moment(q, 0, 1) for q in (1, 2, 4))
    v1 = 9 * (m4 - m2**2)
    v23 = m2 * m2 - m1**4
    v2_main = m1**2 * (m2 - m1**2)
    v4 = 4 * (m2 - m1**2)
    v = v1 + v23 + v4
    inter = v23 - 2 * v2_main
    return AnalyticIndices(np.array([v1, v2_main, v2_main, v4]) / v,
                           np.array([v1, v2_main + inter, v2_main + inter, v4]) / v, v)


def linear_gaussian_indices(sigma1: float, sigma2: float, rho: float) -> AnalyticIndices:
    """Closed forms for ``Y = X1 + X2`` with bivariate Gaussian inputs.

    ``Ti`` is the expected conditional variance form ``E[V(Y | X_~i)] / V``.
    """
    v = sigma1**2 + 2 * rho * sigma1 * sigma2 + sigma2**2
    si = np.array([(sigma1 + rho * sigma2) ** 2, (sigma2 + rho * sigma1) ** 2]) / v
    ti = (1 - rho**2) * np.array([sigma1**2, sigma2**2]) / v
    phi1 = 0.5 + (1 - rho**2) * (sigma1**2 - sigma2**2) / (2 * v)
    return AnalyticIndices(si, ti, v, np.array([phi1, 1 - phi1]))


def sine_mean(X):
    return np.sin(np.asarray(X, dtype=float)[:, 0])


def sine_noise_variance(X):
    return 0.01 * np.asarray(X, dtype=float)[:, 0] ** 2


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def polynomial() -> BenchmarkModel:
    spec = InputSpec.independent([Uniform(0.0, 1.0)] * 4)
    return BenchmarkModel("polynomial", spec, polynomial_function, POLYNOMIAL_PUBLISHED)


def ishigami(a: float = ISHIGAMI_A, b: float = ISHIGAMI_B) -> BenchmarkModel:
    spec = InputSpec.independent([Uniform(-math.pi, math.pi)] * 3)
    return BenchmarkModel("ishigami", spec, lambda X: ishigami_function(X, a, b),
                          _ishigami_analytic(a, b))


def linear_gaussian(sigma1: float = 1.0, sigma2: float = 1.0, rho: float = 0.0,
                    mu=(0.0, 0.0)) -> BenchmarkModel:
    if not -1.0 < rho < 1.0:
        raise InputError("correlation must lie in (-1, 1)")
    cov = np.array([[sigma1**2, rho * sigma1 * sigma2], [rho * sigma1 * sigma2, sigma2**2]])
    spec = InputSpec.gaussian(mu, cov)
    return BenchmarkModel("linear_gaussian", spec, lambda X: X[:, 0] + X[:, 1],
                          linear_gaussian_indices(sigma1, sigma2, rho))


def additive_uniform(d: int = 4) -> BenchmarkModel:
    spec = InputSpec.independent([Uniform(0.0, 1.0)] * d)
    share = np.full(d, 1.0 / d)
    return BenchmarkModel("additive_uniform", spec, lambda X: X.sum(axis=1),
                          AnalyticIndices(share, share.copy(), d / 12.0, share.copy()))


def sine_hetero() -> BenchmarkModel:
    """``y = sin(x) + eps``, ``eps ~ N(0, 0.01 x^2)``, ``x ~ U(0, 6)``."""
    spec = InputSpec.independent([Uniform(0.0, 6.0)])
    return BenchmarkModel("sine_hetero", spec, sine_mean, None, sine_noise_variance)


MODELS = {
    "polynomial": polynomial,
    "ishigami": ishigami,
    "linear_gaussian": linear_gaussian,
    "additive_uniform": additive_uniform,
    "sine_hetero": sine_hetero,
}


def get_model(name: str, **params) -> BenchmarkModel:
    try:
        factory = MODELS[name]
    except KeyError:
        raise InputError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return factory(**params)


def analytic_indices(m: BenchmarkModel) -> AnalyticIndices:
    if m.analytic is None:
        raise InputError(f"model {m.name!r} has no analytic sensitivity indices")
    return m.analytic
