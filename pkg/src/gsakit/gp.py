"""Gaussian-process emulators for deterministic and noisy simulators.

The prior is a constant trend plus a stationary kernel (squared exponential
or Matern 5/2 with one lengthscale per input).  Hyperparameters are fitted by
maximizing the log marginal likelihood with the trend, and where possible the
process variance, profiled out in closed form.

Noise handling:

* ``"zero"``: interpolating model (jitter only if the factorization fails),
* ``"constant"``: one unknown nugget, fitted as a ratio to the process variance,
* an array: known noise variance at each design point (stochastic kriging).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.special import digamma

from .core import DegenerateError, InputError
from .sampling import lhs_sample

KERNELS = ("squared_exponential", "matern52")
_LOG_2PI = math.log(2.0 * math.pi)
_SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True)
class Kernel:
    kind: str
    process_variance: float
    lengthscales: np.ndarray

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise InputError(f"kernel must be one of {KERNELS}, got {self.kind!r}")
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if not self.process_variance > 0 or np.any(~(ls > 0)):
            raise InputError("kernel parameters must be positive")
        object.__setattr__(self, "lengthscales", ls)

    @property
    def d(self) -> int:
        return self.lengthscales.size


def _correlation(kind: str, lengthscales, X1, X2, grad: bool = False):
    """Correlation matrix and, optionally, its derivatives w.r.t. log lengthscales."""
    D2 = (X1[:, None, :] - X2[None, :, :]) ** 2 / lengthscales**2
    r2 = D2.sum(axis=-1)
    if kind == "squared_exponential":
        R = np.exp(-0.5 * r2)
        if not grad:
            return R
        return R, R[None, :, :] * np.moveaxis(D2, -1, 0)
    r = np.sqrt(r2)
    e = np.exp(-_SQRT5 * r)
    R = (1.0 + _SQRT5 * r + 5.0 / 3.0 * r2) * e
    if not grad:
        return R
    g = 5.0 / 3.0 * (1.0 + _SQRT5 * r) * e
    return R, g[None, :, :] * np.moveaxis(D2, -1, 0)


def kernel_matrix(k: Kernel, X1, X2) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != k.d or X2.shape[1] != k.d:
        raise InputError("input dimension does not match the number of lengthscales")
    return k.process_variance * _correlation(k.kind, k.lengthscales, X1, X2)


def kernel_eval(k: Kernel, x, x_prime) -> float:
    return float(kernel_matrix(k, np.reshape(x, (1, -1)), np.reshape(x_prime, (1, -1)))[0, 0])


# ---------------------------------------------------------------------------
# fitted model
# ---------------------------------------------------------------------------

def _cholesky_with_jitter(C: np.ndarray, scale: float):
    """Cholesky factor, adding ``scale * 1e-10`` ... ``scale * 1e-4`` to the diagonal if needed."""
    try:
        return np.linalg.cholesky(C), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-10
    while jitter <= 1e-4 * (1 + 1e-9):
        try:
            return np.linalg.cholesky(C + jitter * scale * np.eye(C.shape[0])), jitter * scale
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise DegenerateError("covariance matrix is not positive definite even after jitter")


@dataclass(frozen=True)
class Prediction:
    mean: np.ndarray
    var: np.ndarray
    noise_var: np.ndarray


@dataclass(frozen=True)
class GpModel:
    kernel: Kernel
    trend: float
    design: np.ndarray
    outputs: np.ndarray
    noise_at_design: np.ndarray
    nugget: float = 0.0
    jitter: float = 0.0
    log_likelihood: float = float("nan")
    factor: np.ndarray = field(init=False, repr=False, compare=False)
    alpha: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.design, dtype=float))
        y = np.asarray(self.outputs, dtype=float).reshape(-1)
        tau = np.broadcast_to(np.asarray(self.noise_at_design, dtype=float), y.shape).copy()
        if X.shape[0] != y.size:
            raise InputError("design and outputs disagree in length")
        for name, val in (("design", X), ("outputs", y), ("noise_at_design", tau)):
            object.__setattr__(self, name, val)
        C = kernel_matrix(self.kernel, X, X) + np.diag(tau)
        if self.jitter:
            C[np.diag_indices_from(C)] += self.jitter
        try:
            L = np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            L, extra = _cholesky_with_jitter(C, self.kernel.process_variance)
            object.__setattr__(self, "jitter", self.jitter + extra)
        alpha = linalg.cho_solve((L, True), y - self.trend)
        object.__setattr__(self, "factor", L)
        object.__setattr__(self, "alpha", alpha)

    @property
    def n(self) -> int:
        return self.outputs.size

    def covariance(self) -> np.ndarray:
        C = kernel_matrix(self.kernel, self.design, self.design) + np.diag(self.noise_at_design)
        C[np.diag_indices_from(C)] += self.jitter
        return C

    def with_outputs(self, outputs) -> "GpModel":
        """Same hyperparameters and design, new observations (trend kept)."""
        return GpModel(self.kernel, self.trend, self.design, outputs, self.noise_at_design,
                       self.nugget, self.jitter)

    def to_dict(self) -> dict:
        return {"kernel": {"kind": self.kernel.kind,
                           "process_variance": self.kernel.process_variance,
                           "lengthscales": self.kernel.lengthscales.tolist()},
                "trend": self.trend, "nugget": self.nugget, "jitter": self.jitter,
                "log_likelihood": self.log_likelihood,
                "design": self.design.tolist(), "outputs": self.outputs.tolist(),
                "noise": self.noise_at_design.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "GpModel":
        k = doc["kernel"]
        return cls(Kernel(k["kind"], k["process_variance"], k["lengthscales"]), doc["trend"],
                   doc["design"], doc["outputs"], doc["noise"], doc.get("nugget", 0.0),
                   doc.get("jitter", 0.0), doc.get("log_likelihood", float("nan")))

    @classmethod
    def from_json(cls, text: str) -> "GpModel":
        return cls.from_dict(json.loads(text))


def predict(m: GpModel, Xstar, noise_model=None, batch: int = 4096) -> Prediction:
    """Posterior mean and variance at the rows of ``Xstar``.

    ``noise_var`` is the noise variance at each site: the fitted nugget for a
    homoscedastic model, ``noise_model(Xstar)`` when a variance model is
    given, zero otherwise.  ``var`` includes it.
    """
    Xs = np.asarray(Xstar, dtype=float)
    if Xs.ndim == 1:
        Xs = Xs.reshape(1, -1) if Xs.size == m.kernel.d else Xs.reshape(-1, 1)
    if Xs.shape[1] != m.kernel.d:
        raise InputError(f"expected {m.kernel.d} input columns, got {Xs.shape[1]}")
    mean = np.empty(Xs.shape[0])
    var = np.empty(Xs.shape[0])
    for s in range(0, Xs.shape[0], batch):
        c = kernel_matrix(m.kernel, Xs[s:s + batch], m.design)
        mean[s:s + batch] = m.trend + c @ m.alpha
        v = linalg.solve_triangular(m.factor, c.T, lower=True)
        var[s:s + batch] = m.kernel.process_variance - np.sum(v * v, axis=0)
    if np.any(var < -1e-10 * m.kernel.process_variance):
        raise DegenerateError("negative predictive variance beyond roundoff")
    var = np.maximum(var, 0.0)
    if noise_model is not None:
        noise = np.asarray(noise_model(Xs), dtype=float)
    else:
        noise = np.full(Xs.shape[0], m.nugget)
    return Prediction(mean, var + noise, noise)


# ---------------------------------------------------------------------------
# likelihood and fitting
# ---------------------------------------------------------------------------

class _Likelihood:
    """Log marginal likelihood and gradient over log-parameters.

    Parameter vector: log lengthscales, then either the log nugget ratio
    (``mode == "constant"``), the log process variance (``mode == "fixed"``),
    or nothing (``mode == "zero"``).
    """

    def __init__(self, X, y, kind, mode, tau=None):
        self.X, self.y, self.kind, self.mode = X, y, kind, mode
        self.tau = tau
        self.n, self.d = X.shape
        self.allow_jitter = False

    def unpack(self, theta):
        ls = np.exp(theta[:self.d])
        extra = math.exp(theta[self.d]) if self.mode != "zero" else 0.0
        return ls, extra

    def _gls(self, L, y):
        one = np.ones(self.n)
        Ci1 = linalg.cho_solve((L, True), one)
        Ciy = linalg.cho_solve((L, True), y)
        mu = float(one @ Ciy / (one @ Ci1))
        return mu

    def __call__(self, theta, grad=True):
        ls, extra = self.unpack(theta)
        R, dR = _correlation(self.kind, ls, self.X, self.X, grad=True)
        n = self.n
        if self.mode == "fixed":
            C = extra * R + np.diag(self.tau)
        else:
            C = R.copy()
            C[np.diag_indices(n)] += extra
        try:
            if self.allow_jitter:
                L, _ = _cholesky_with_jitter(C, extra if self.mode == "fixed" else 1.0)
            else:
                L = np.linalg.cholesky(C)
        except (np.linalg.LinAlgError, DegenerateError):
            return -np.inf, np.zeros_like(theta)
        mu = self._gls(L, self.y)
        r = self.y - mu
        beta = linalg.cho_solve((L, True), r)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        if self.mode == "fixed":
            ll = -0.5 * r @ beta - 0.5 * logdet - 0.5 * n * _LOG_2PI
            a = beta
            sf2 = extra
        else:
            s2 = r @ beta / n
            if not s2 > 0:
                return -np.inf, np.zeros_like(theta)
            ll = -0.5 * n * math.log(s2) - 0.5 * logdet - 0.5 * n * (1.0 + _LOG_2PI)
            a = beta / math.sqrt(s2)
            sf2 = 1.0
        if not grad:
            return ll, None
        W = np.outer(a, a) - linalg.cho_solve((L, True), np.eye(n))
        g = np.empty_like(theta)
        for j in range(self.d):
            g[j] = 0.5 * np.sum(W * (sf2 * dR[j]))
        if self.mode == "constant":
            g[self.d] = 0.5 * extra * np.trace(W)
        elif self.mode == "fixed":
            g[self.d] = 0.5 * np.sum(W * (extra * R))
        return ll, g

    def profile(self, theta):
        """Return ``(trend, process_variance, nugget_variance)`` at ``theta``."""
        ls, extra = self.unpack(theta)
        R = _correlation(self.kind, ls, self.X, self.X)
        if self.mode == "fixed":
            C = extra * R + np.diag(self.tau)
        else:
            C = R.copy()
            C[np.diag_indices(self.n)] += extra
        L, _ = _cholesky_with_jitter(C, 1.0 if self.mode != "fixed" else extra)
        mu = self._gls(L, self.y)
        if self.mode == "fixed":
            return mu, extra, 0.0
        r = self.y - mu
        s2 = float(r @ linalg.cho_solve((L, True), r)) / self.n
        return mu, s2, extra * s2


def fit_gp(X, Y, noise="zero", kernel: str = "matern52", bounds: Optional[dict] = None,
           restarts: int = 5, seed: int = 0) -> GpModel:
    """Maximum-likelihood GP fit.

    ``noise`` is ``"zero"``, ``"constant"`` or an array of known noise
    variances (one per row).  Lengthscales are searched in
    ``[1e-3, 1e3] * range`` of each input column; ``bounds`` may override
    ``"lengthscale"`` (relative factors), ``"nugget"`` (ratio to the process
    variance) and ``"process_variance"`` (relative to the output variance).
    Each of the ``restarts`` L-BFGS-B runs starts from a Latin hypercube
    point over the central part of the box.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(Y, dtype=float).reshape(-1)
    if X.shape[0] != y.size:
        raise InputError("X and Y disagree in length")
    n, d = X.shape
    if n < 2:
        raise InputError("need at least two training points")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise InputError("training data must be finite")
    if restarts < 1:
        raise InputError("need at least one restart")
    if kernel not in KERNELS:
        raise InputError(f"kernel must be one of {KERNELS}")
    var_y = float(np.var(y))
    if not var_y > 0:
        raise DegenerateError("training outputs have zero variance")

    tau = None
    if isinstance(noise, str):
        if noise not in ("zero", "constant"):
            raise InputError("noise must be 'zero', 'constant' or an array of variances")
        mode = noise
        if mode == "zero" and len({tuple(r) for r in X}) < n:
            raise InputError("duplicate design rows need a noise model")
    else:
        tau = np.broadcast_to(np.asarray(noise, dtype=float), (n,)).copy()
        if np.any(tau < 0) or not np.all(np.isfinite(tau)):
            raise InputError("noise variances must be finite and nonnegative")
        mode = "fixed"

    b = dict(lengthscale=(1e-3, 1e3), nugget=(1e-8, 1e2), process_variance=(1e-4, 1e2))
    b.update(bounds or {})
    span = np.ptp(X, axis=0)
    span[span <= 0] = 1.0
    lo = list(np.log(b["lengthscale"][0] * span))
    hi = list(np.log(b["lengthscale"][1] * span))
    start_lo = list(np.log(0.05 * span))
    start_hi = list(np.log(2.0 * span))
    if mode == "constant":
        lo.append(math.log(b["nugget"][0]))
        hi.append(math.log(b["nugget"][1]))
        start_lo.append(math.log(1e-6))
        start_hi.append(math.log(1e-1))
    elif mode == "fixed":
        scale = max(var_y, float(tau.mean()))
        lo.append(math.log(b["process_variance"][0] * scale))
        hi.append(math.log(b["process_variance"][1] * scale))
        start_lo.append(math.log(0.1 * var_y))
        start_hi.append(math.log(2.0 * var_y))
    lo, hi = np.array(lo), np.array(hi)
    start_lo = np.clip(start_lo, lo, hi)
    start_hi = np.clip(start_hi, lo, hi)

    lik = _Likelihood(X, y, kernel, mode, tau)
    starts = start_lo + lhs_sample(restarts, lo.size, seed).points * (start_hi - start_lo)

    def objective(theta):
        ll, g = lik(theta)
        if not np.isfinite(ll):
            return 1e300, np.zeros_like(theta)
        return -ll, -g

    best_theta, best_ll = None, -np.inf
    # exact factorizations first; jitter only if no start point is usable
    for allow_jitter in (False, True):
        lik.allow_jitter = allow_jitter
        for x0 in starts:
            ll0, _ = lik(x0, grad=False)
            if ll0 > best_ll:
                best_theta, best_ll = x0.copy(), ll0
            if not np.isfinite(ll0):
                continue
            res = optimize.minimize(objective, x0, jac=True, method="L-BFGS-B",
                                    bounds=list(zip(lo, hi)), options={"maxiter": 500})
            ll, _ = lik(res.x, grad=False)
            if np.isfinite(ll) and ll > best_ll:
                best_theta, best_ll = res.x.copy(), ll
        if best_theta is not None:
            break
    if best_theta is None:
        raise DegenerateError("likelihood could not be evaluated at any start point")

    mu, sf2, nugget = lik.profile(best_theta)
    ls, _ = lik.unpack(best_theta)
    if mode == "zero":
        noise_vec = np.zeros(n)
    elif mode == "constant":
        noise_vec = np.full(n, nugget)
    else:
        noise_vec = tau
    return GpModel(Kernel(kernel, sf2, ls), mu, X, y, noise_vec,
                   nugget if mode == "constant" else 0.0, 0.0, float(best_ll))


def log_likelihood(m: GpModel) -> float:
    """Gaussian log marginal likelihood of ``m`` at its own hyperparameters and trend."""
    L = m.factor
    r = m.outputs - m.trend
    return float(-0.5 * r @ m.alpha - np.sum(np.log(np.diag(L))) - 0.5 * m.n * _LOG_2PI)


# ---------------------------------------------------------------------------
# stochastic kriging
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicatedData:
    unique_design: np.ndarray
    replicates: tuple

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.unique_design, dtype=float))
        reps = tuple(np.asarray(r, dtype=float).reshape(-1) for r in self.replicates)
        if X.shape[0] != len(reps):
            raise InputError("need one replicate vector per design site")
        if any(r.size < 1 for r in reps):
            raise InputError("every site needs at least one replicate")
        if len({tuple(row) for row in X}) != X.shape[0]:
            raise InputError("design sites must be unique")
        object.__setattr__(self, "unique_design", X)
        object.__setattr__(self, "replicates", reps)

    @property
    def counts(self) -> np.ndarray:
        return np.array([r.size for r in self.replicates])

    @classmethod
    def from_matrix(cls, X, Y) -> "ReplicatedData":
        """``Y`` has one row per site and one column per replicate."""
        return cls(X, tuple(np.asarray(Y, dtype=float)))


@dataclass(frozen=True)
class StochasticKrigingData:
    mean_outputs: np.ndarray
    noise_estimates: np.ndarray
    counts: np.ndarray

    @property
    def mean_noise(self) -> np.ndarray:
        """Noise variance of each site mean, ``noise / count``."""
        return self.noise_estimates / self.counts


def stochastic_kriging_noise(data: ReplicatedData) -> StochasticKrigingData:
    """Per-site sample means and unbiased sample variances of the replicates."""
    counts = data.counts
    if np.any(counts < 2):
        raise InputError("stochastic kriging needs at least two replicates at every site")
    means = np.array([r.mean() for r in data.replicates])
    variances = np.array([r.var(ddof=1) for r in data.replicates])
    return StochasticKrigingData(means, variances, counts)


@dataclass(frozen=True)
class VarianceModel:
    """Noise-variance predictor ``exp(GP mean of log variance)``."""

    gp: GpModel
    floor: float

    def __call__(self, X) -> np.ndarray:
        return np.exp(predict(self.gp, X).mean)


def log_variance_bias(counts) -> np.ndarray:
    """``E[log s^2] - log sigma^2`` for Gaussian replicates with ``counts`` samples."""
    k = np.asarray(counts, dtype=float) - 1.0
    return digamma(k / 2.0) - np.log(k / 2.0)


def fit_variance_surrogate(X, noise_estimates, counts=None, mean_outputs=None,
                           kernel: str = "matern52", restarts: int = 5, seed: int = 0,
                           floor: Optional[float] = None) -> VarianceModel:
    """GP on log noise variances; predictions are positive by construction.

    Estimates are floored at ``1e-8 * var(mean_outputs)`` (or ``floor``).
    With replicate ``counts`` the log targets are corrected for the downward
    bias of the log sample variance.
    """
    v = np.asarray(noise_estimates, dtype=float).reshape(-1)
    if floor is None:
        ref = float(np.var(mean_outputs)) if mean_outputs is not None else float(np.max(v, initial=0.0))
        floor = 1e-8 * ref if ref > 0 else 1e-300
    v = np.maximum(v, floor)
    target = np.log(v)
    if counts is not None:
        target = target - log_variance_bias(counts)
    if np.ptp(target) <= 1e-12 * max(1.0, abs(float(target.mean()))):
        # flat target: constant GP at that level
        X2 = np.atleast_2d(np.asarray(X, dtype=float))
        k = Kernel(kernel, 1e-12, np.maximum(np.ptp(X2, axis=0), 1.0))
        gp = GpModel(k, float(target.mean()), X2, target, np.full(target.size, 1e-6))
        return VarianceModel(gp, floor)
    gp = fit_gp(X, target, noise="constant", kernel=kernel, restarts=restarts, seed=seed)
    return VarianceModel(gp, floor)
