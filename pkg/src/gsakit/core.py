"""Input-space description shared by every other module.

An :class:`InputSpec` holds one :class:`Marginal` per factor and, optionally,
a joint Gaussian dependence structure.  Unit-cube designs are mapped onto the
input space with :func:`scale_design`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class GsaError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 1


class InputError(GsaError, ValueError):
    """Malformed or inconsistent user input."""

    exit_code = 2


class DegenerateError(GsaError, ArithmeticError):
    """Numerical degeneracy (zero output variance, singular covariance...)."""

    exit_code = 3


class ExternalModelError(GsaError, RuntimeError):
    """An external simulator failed or produced unusable output."""

    exit_code = 4


# ---------------------------------------------------------------------------
# Standard normal quantile
# ---------------------------------------------------------------------------

# Acklam's rational approximation coefficients.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p: np.ndarray) -> np.ndarray:
    x = np.empty_like(p)
    lo = p < _P_LOW
    hi = p > 1.0 - _P_LOW
    mid = ~(lo | hi)

    q = p[mid] - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    x[mid] = num / den

    for mask, sign, pp in ((lo, 1.0, p[lo]), (hi, -1.0, 1.0 - p[hi])):
        q = np.sqrt(-2.0 * np.log(pp))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        x[mask] = sign * num / den
    return x


_erfc = np.vectorize(math.erfc, otypes=[float])


def norm_ppf(p):
    """Standard normal quantile.

    Acklam's approximation (relative error ~1e-9) followed by one Halley
    step on ``erfc``, which brings the result to near machine precision.
    Accepts scalars or arrays; raises :class:`InputError` outside (0, 1).
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0.0) | ~(arr < 1.0)):
        raise InputError("Gaussian quantile is infinite or undefined outside (0, 1)")
    flat = arr.reshape(-1)
    x = _acklam(flat)
    e = 0.5 * _erfc(-x / math.sqrt(2.0)) - flat
    u = e * math.sqrt(2.0 * math.pi) * np.exp(0.5 * x * x)
    x = x - u / (1.0 + 0.5 * x * u)
    x = x.reshape(arr.shape)
    return float(x) if x.ndim == 0 else x


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or not self.a < self.b:
            raise InputError(f"Uniform requires finite a < b, got ({self.a}, {self.b})")

    @property
    def mean(self) -> float:
        return 0.5 * (self.a + self.b)

    @property
    def variance(self) -> float:
        return (self.b - self.a) ** 2 / 12.0

    def to_dict(self) -> dict:
        return {"kind": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Gaussian:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)) or not self.sigma > 0:
            raise InputError(f"Gaussian requires sigma > 0, got {self.sigma}")

    @property
    def mean(self) -> float:
        return self.mu

    @property
    def variance(self) -> float:
        return self.sigma ** 2

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "mu": self.mu, "sigma": self.sigma}


Marginal = Uniform | Gaussian


def marginal_from_dict(doc: dict) -> Marginal:
    kind = str(doc.get("kind", "")).lower()
    try:
        if kind == "uniform":
            return Uniform(float(doc["a"]), float(doc["b"]))
        if kind == "gaussian":
            return Gaussian(float(doc["mu"]), float(doc["sigma"]))
    except KeyError as exc:
        raise InputError(f"marginal {doc!r} is missing field {exc}") from None
    raise InputError(f"unknown marginal kind {doc.get('kind')!r}")


def inverse_cdf(m: Marginal, u):
    """Return the ``u``-quantile of marginal ``m`` (scalar or array ``u``)."""
    arr = np.asarray(u, dtype=float)
    if isinstance(m, Uniform):
        if np.any((arr < 0.0) | (arr > 1.0)):
            raise InputError("probabilities must lie in [0, 1]")
        out = m.a + (m.b - m.a) * arr
        return float(out) if out.ndim == 0 else out
    return m.mu + m.sigma * norm_ppf(arr)


# ---------------------------------------------------------------------------
# Gaussian dependence
# ---------------------------------------------------------------------------

def cholesky_psd(cov: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Lower Cholesky factor of a symmetric PSD matrix.

    Pivots down to ``-rtol * max(diag)`` are clamped to zero; anything more
    negative raises :class:`DegenerateError`.
    """
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    tol = rtol * max(float(np.max(np.diag(cov))), 0.0)
    L = np.zeros_like(cov)
    for j in range(n):
        pivot = cov[j, j] - L[j, :j] @ L[j, :j]
        if pivot < -tol:
            raise DegenerateError(f"covariance is not positive semidefinite (pivot {pivot:.3g})")
        if pivot <= tol:
            # column j is (numerically) a combination of earlier ones
            continue
        L[j, j] = math.sqrt(pivot)
        L[j + 1:, j] = (cov[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


@dataclass(frozen=True)
class GaussianDependence:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        d = mean.size
        if cov.shape != (d, d):
            raise InputError(f"covariance shape {cov.shape} does not match mean length {d}")
        if not np.all(np.isfinite(cov)) or not np.all(np.isfinite(mean)):
            raise InputError("mean and covariance must be finite")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
            raise InputError("covariance must be symmetric")
        if np.any(np.diag(cov) <= 0):
            raise InputError("covariance diagonal must be strictly positive")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        chol = cholesky_psd(cov)
        chol.setflags(write=False)
        object.__setattr__(self, "chol", chol)

    @property
    def d(self) -> int:
        return self.mean.size

    @classmethod
    def from_correlation(cls, mean, sigmas, corr) -> "GaussianDependence":
        s = np.asarray(sigmas, dtype=float)
        return cls(mean, np.asarray(corr, dtype=float) * np.outer(s, s))


def condition_gaussian(dep: GaussianDependence, fixed_idx: Sequence[int],
                       fixed_vals) -> GaussianDependence:
    """Distribution of the free coordinates given ``x[fixed_idx] = fixed_vals``.

    The result lists the free coordinates in increasing index order.
    """
    J = np.asarray(list(fixed_idx), dtype=int)
    vals = np.asarray(fixed_vals, dtype=float).reshape(-1)
    if J.size == 0 or J.size >= dep.d or len(set(J.tolist())) != J.size:
        raise InputError("conditioning set must be a nonempty proper subset")
    if np.any((J < 0) | (J >= dep.d)):
        raise InputError("conditioning index out of range")
    if vals.size != J.size:
        raise InputError("need one fixed value per conditioning index")
    I = np.setdiff1d(np.arange(dep.d), J)
    coef, cond_cov = _regression(dep, I, J)
    mean = dep.mean[I] + coef @ (vals - dep.mean[J])
    return GaussianDependence(mean, cond_cov)


def _regression(dep: GaussianDependence, I: np.ndarray, J: np.ndarray):
    """Return ``(Sigma_IJ Sigma_JJ^-1, conditional covariance of I given J)``."""
    S = dep.cov
    S_JJ = S[np.ix_(J, J)]
    S_IJ = S[np.ix_(I, J)]
    w = np.linalg.eigvalsh(S_JJ)
    if w[0] <= 1e-10 * max(w[-1], 0.0):
        raise DegenerateError("conditioning block of the covariance is numerically singular")
    coef = np.linalg.solve(S_JJ, S_IJ.T).T
    cond = S[np.ix_(I, I)] - coef @ S_IJ.T
    cond = 0.5 * (cond + cond.T)
    # roundoff can leave tiny negative diagonal entries for near-deterministic pairs
    np.fill_diagonal(cond, np.maximum(np.diag(cond), 1e-300))
    return coef, cond


# ---------------------------------------------------------------------------
# Input specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InputSpec:
    names: tuple
    marginals: tuple
    dependence: Optional[GaussianDependence] = None

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        marginals = tuple(self.marginals)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "marginals", marginals)
        if len(names) < 1:
            raise InputError("at least one input factor is required")
        if len(set(names)) != len(names):
            raise InputError("factor names must be unique")
        if len(marginals) != len(names):
            raise InputError("need exactly one marginal per factor")
        for m in marginals:
            if not isinstance(m, (Uniform, Gaussian)):
                raise InputError(f"unsupported marginal {m!r}")
        dep = self.dependence
        if dep is not None:
            if dep.d != len(names):
                raise InputError("dependence dimension does not match number of factors")
            for j, m in enumerate(marginals):
                if not isinstance(m, Gaussian):
                    raise InputError("joint Gaussian dependence requires Gaussian marginals")
                if not (math.isclose(m.mu, dep.mean[j], rel_tol=1e-9, abs_tol=1e-12)
                        and math.isclose(m.sigma ** 2, dep.cov[j, j], rel_tol=1e-9)):
                    raise InputError(f"marginal of {names[j]!r} disagrees with the joint covariance")

    @property
    def d(self) -> int:
        return len(self.names)

    @classmethod
    def independent(cls, marginals, names=None) -> "InputSpec":
        marginals = tuple(marginals)
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(len(marginals)))
        return cls(tuple(names), marginals)

    @classmethod
    def gaussian(cls, mean, cov, names=None) -> "InputSpec":
        dep = GaussianDependence(mean, cov)
        marginals = tuple(Gaussian(float(dep.mean[j]), math.sqrt(dep.cov[j, j])) for j in range(dep.d))
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(dep.d))
        return cls(tuple(names), marginals, dep)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        dep = None
        if self.dependence is not None:
            dep = {"mean": self.dependence.mean.tolist(), "cov": self.dependence.cov.tolist()}
        return {"names": list(self.names),
                "marginals": [m.to_dict() for m in self.marginals],
                "dependence": dep}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "InputSpec":
        try:
            names = doc["names"]
            marginals = tuple(marginal_from_dict(m) for m in doc["marginals"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed input specification: {exc}") from None
        dep_doc = doc.get("dependence")
        dep = None
        if dep_doc is not None:
            dep = GaussianDependence(dep_doc["mean"], dep_doc["cov"])
        return cls(tuple(names), marginals, dep)

    @classmethod
    def from_json(cls, text: str) -> "InputSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"input specification is not valid JSON: {exc}") from None
        return cls.from_dict(doc)


def scale_design(U, spec: InputSpec) -> np.ndarray:
    """Map unit-cube samples onto the input space of ``spec``.

    Independent factors go through their own inverse CDF.  With a joint
    Gaussian dependence the rows become standard normal vectors ``z`` and
    are returned as ``mean + L z`` with ``L`` the lower Cholesky factor.
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[1] != spec.d:
        raise InputError(f"design has shape {U.shape}, expected (n, {spec.d})")
    if U.shape[0] == 0:
        return np.empty((0, spec.d))
    if spec.dependence is not None:
        dep = spec.dependence
        Z = norm_ppf(U)
        return dep.mean + Z @ dep.chol.T
    X = np.empty_like(U)
    for j, m in enumerate(spec.marginals):
        X[:, j] = inverse_cdf(m, U[:, j])
    return X
