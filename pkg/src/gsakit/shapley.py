"""Shapley effects for possibly dependent inputs.

Exact subset and permutation formulas operate on any :class:`GameSpec`.
:func:`estimate_shapley` combines random permutations with a two-level Monte
Carlo estimate of the expected conditional variance characteristic function
``nu(I) = E[V(Y | X_~I)] / V(Y)``.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .core import (DegenerateError, InputError, InputSpec, _regression, cholesky_psd,
                   inverse_cdf)
from .sampling import format_float, make_rng

MAX_EXACT_D = 20
MAX_PERMUTATION_D = 9


@dataclass(frozen=True)
class GameSpec:
    """Cooperative game on players ``0..d-1``; ``nu`` maps a frozenset to a payoff."""

    d: int
    nu: Callable[[frozenset], float]

    @classmethod
    def from_table(cls, d: int, table: dict) -> "GameSpec":
        table = {frozenset(k): float(v) for k, v in table.items()}
        table.setdefault(frozenset(), 0.0)
        return cls(d, lambda s: table[frozenset(s)])


def _all_payoffs(game: GameSpec) -> np.ndarray:
    """Payoffs indexed by bitmask."""
    values = np.empty(2**game.d)
    for mask in range(2**game.d):
        values[mask] = game.nu(frozenset(j for j in range(game.d) if mask >> j & 1))
    if abs(values[0]) > 1e-12:
        raise InputError("the empty coalition must have zero payoff")
    return values


def exact_shapley(game: GameSpec) -> np.ndarray:
    """Shapley values from the weighted sum over coalitions."""
    d = game.d
    if d > MAX_EXACT_D:
        raise InputError(f"exact Shapley enumeration is limited to d <= {MAX_EXACT_D}")
    values = _all_payoffs(game)
    weight = [math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)]
    phi = np.zeros(d)
    for mask in range(2**d):
        size = bin(mask).count("1")
        for i in range(d):
            if not mask >> i & 1:
                phi[i] += weight[size] * (values[mask | 1 << i] - values[mask])
    return phi


def castro_shapley(game: GameSpec, permutations: Iterable[Sequence[int]]) -> np.ndarray:
    """Average marginal contributions over the given permutations."""
    d = game.d
    cache: dict = {}

    def nu(mask):
        if mask not in cache:
            cache[mask] = 0.0 if mask == 0 else game.nu(frozenset(j for j in range(d) if mask >> j & 1))
        return cache[mask]

    total = np.zeros(d)
    count = 0
    for perm in permutations:
        mask = 0
        prev = nu(0)
        for i in perm:
            mask |= 1 << int(i)
            cur = nu(mask)
            total[int(i)] += cur - prev
            prev = cur
        count += 1
    if count == 0:
        raise InputError("need at least one permutation")
    return total / count


def permutation_shapley(game: GameSpec) -> np.ndarray:
    """Shapley values averaged over all ``d!`` orderings."""
    if game.d > MAX_PERMUTATION_D:
        raise InputError(f"full permutation enumeration is limited to d <= {MAX_PERMUTATION_D}")
    return castro_shapley(game, itertools.permutations(range(game.d)))


def sample_permutations(d: int, m: int, seed: int = 0) -> np.ndarray:
    """``m`` uniform random permutations; permutation ``k`` uses stream ``(seed, 1, k)``."""
    return np.array([make_rng(seed, 1, k).permutation(d) for k in range(m)], dtype=int).reshape(m, d)


# ---------------------------------------------------------------------------
# Monte Carlo Shapley effects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShapleyConfig:
    m_permutations: int = 1000
    n_outer: int = 1
    n_inner: int = 3
    n_var: int = 10_000
    seed: int = 0

    def __post_init__(self):
        for name in ("m_permutations", "n_outer", "n_inner", "n_var"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.n_inner < 2:
            raise InputError("n_inner must be >= 2 for an unbiased conditional variance")


@dataclass(frozen=True)
class ShapleyEstimate:
    names: tuple
    phi: np.ndarray
    std_error: np.ndarray
    total_variance: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", "shapley", "std.error"])
        for n, p, s in zip(self.names, self.phi, self.std_error):
            w.writerow([n, format_float(p), format_float(s)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"total_variance": self.total_variance,
                "results": [{"parameter": n, "shapley": float(p), "std.error": float(s)}
                            for n, p, s in zip(self.names, self.phi, self.std_error)]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"Shapley effects (total variance {self.total_variance:.3f})",
                 f"{'parameter':>10} {'shapley':>8} {'std.error':>9}"]
        for n, p, s in zip(self.names, self.phi, self.std_error):
            lines.append(f"{n:>10} {p:8.3f} {s:9.3f}")
        return "\n".join(lines) + "\n"


class _ConditionalSampler:
    """Draws ``X`` with ``X_~I`` fixed per outer sample and ``X_I`` redrawn inside.

    Dependent specs consume standard normal innovations, independent ones
    uniforms; both have shape ``(..., d)`` and only the leading ``|J|`` or
    ``|I|`` coordinates are used.
    """

    def __init__(self, spec: InputSpec):
        self.spec = spec
        self.d = spec.d
        self._cache: dict = {}

    @property
    def gaussian(self) -> bool:
        return self.spec.dependence is not None

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.standard_normal(shape) if self.gaussian else rng.random(shape)

    def _plan(self, I: tuple):
        if I not in self._cache:
            J = tuple(j for j in range(self.d) if j not in I)
            if not I or not J:
                raise InputError("conditioning needs a nonempty proper subset")
            plan = None
            if self.gaussian:
                dep = self.spec.dependence
                Ia, Ja = np.array(I), np.array(J)
                coef, cond = _regression(dep, Ia, Ja)
                L_J = cholesky_psd(dep.cov[np.ix_(Ja, Ja)])
                L_I = cholesky_psd(cond)
                plan = (coef, L_J, L_I)
            self._cache[I] = (J, plan)
        return self._cache[I]

    def build(self, I: tuple, outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
        """``outer``: (k, n_o, d); ``inner``: (k, n_o, n_i, d) -> X of shape (k, n_o, n_i, d)."""
        J, plan = self._plan(I)
        k, n_o, n_i, d = inner.shape
        X = np.empty((k, n_o, n_i, d))
        Ia, Ja = list(I), list(J)
        if self.gaussian:
            dep = self.spec.dependence
            coef, L_J, L_I = plan
            xJ = dep.mean[Ja] + outer[..., :len(Ja)] @ L_J.T                 # (k, n_o, |J|)
            mI = dep.mean[Ia] + (xJ - dep.mean[Ja]) @ coef.T                  # (k, n_o, |I|)
            xI = mI[:, :, None, :] + inner[..., :len(Ia)] @ L_I.T             # (k, n_o, n_i, |I|)
            X[..., Ja] = xJ[:, :, None, :]
            X[..., Ia] = xI
            return X
        marg = self.spec.marginals
        for pos, j in enumerate(Ja):
            X[..., j] = inverse_cdf(marg[j], outer[..., pos])[:, :, None]
        for pos, j in enumerate(Ia):
            X[..., j] = inverse_cdf(marg[j], inner[..., pos])
        return X


def _evaluate(model, X: np.ndarray) -> np.ndarray:
    flat = X.reshape(-1, X.shape[-1])
    y = np.asarray(model(flat), dtype=float).reshape(-1)
    if y.size != flat.shape[0]:
        raise InputError("model returned the wrong number of outputs")
    if not np.all(np.isfinite(y)):
        raise InputError("model outputs contain non-finite values")
    return y.reshape(X.shape[:-1])


def output_variance(model, spec: InputSpec, n: int, seed: int = 0) -> float:
    """Unbiased variance of ``model`` over ``n`` fresh input samples (stream ``(seed, 0)``)."""
    if n < 2:
        raise InputError("need at least two samples to estimate a variance")
    rng = make_rng(seed, 0)
    dep = spec.dependence
    if dep is not None:
        X = dep.mean + rng.standard_normal((int(n), spec.d)) @ dep.chol.T
    else:
        U = rng.random((int(n), spec.d))
        X = np.column_stack([inverse_cdf(m, U[:, j]) for j, m in enumerate(spec.marginals)])
    return float(np.var(_evaluate(model, X[None, ...])[0], ddof=1))


def nu2_estimate(model, spec: InputSpec, I: Iterable[int], cfg: ShapleyConfig, v_y: float,
                 rng: Optional[np.random.Generator] = None) -> float:
    """Two-level Monte Carlo estimate of ``E[V(Y | X_~I)] / V(Y)``."""
    I = tuple(sorted(set(int(i) for i in I)))
    if not I or len(I) >= spec.d:
        raise InputError("nu2 needs a nonempty proper subset of the factors")
    if not v_y > 0:
        raise DegenerateError("output variance must be positive")
    if cfg.n_inner < 2:
        raise InputError("n_inner must be >= 2")
    rng = rng if rng is not None else make_rng(cfg.seed, 2)
    sampler = _ConditionalSampler(spec)
    outer = sampler.draw(rng, (1, cfg.n_outer, spec.d))
    inner = sampler.draw(rng, (1, cfg.n_outer, cfg.n_inner, spec.d))
    y = _evaluate(model, sampler.build(I, outer, inner))
    return float(np.var(y, axis=-1, ddof=1).mean() / v_y)


def estimate_shapley(model, spec: InputSpec, cfg: Optional[ShapleyConfig] = None) -> ShapleyEstimate:
    """Random-permutation Shapley effects with the ``nu2`` characteristic function.

    Each permutation telescopes from 0 to ``V(Y)``, so the normalized effects
    sum to one.  The denominator comes from ``cfg.n_var`` fresh samples.
    Permutation ``k`` draws all of its randomness from stream
    ``(seed, 1, k)``; results do not depend on evaluation order.
    """
    cfg = cfg or ShapleyConfig()
    d, M = spec.d, cfg.m_permutations
    v_y = output_variance(model, spec, cfg.n_var, cfg.seed)
    if not v_y > 0:
        raise DegenerateError("estimated output variance is zero")
    if d == 1:
        return ShapleyEstimate(spec.names, np.ones(1), np.zeros(1), v_y)

    sampler = _ConditionalSampler(spec)
    n_o, n_i = cfg.n_outer, cfg.n_inner
    perms = np.empty((M, d), dtype=int)
    outer = np.empty((M, d - 1, n_o, d))
    inner = np.empty((M, d - 1, n_o, n_i, d))
    for k in range(M):
        rng = make_rng(cfg.seed, 1, k)
        perms[k] = rng.permutation(d)
        outer[k] = sampler.draw(rng, (d - 1, n_o, d))
        inner[k] = sampler.draw(rng, (d - 1, n_o, n_i, d))

    X = np.empty((M, d - 1, n_o, n_i, d))
    groups: dict = {}
    for k in range(M):
        for j in range(d - 1):
            groups.setdefault(tuple(sorted(perms[k, :j + 1])), []).append((k, j))
    for I, members in groups.items():
        ks, js = np.array([m[0] for m in members]), np.array([m[1] for m in members])
        X[ks, js] = sampler.build(I, outer[ks, js], inner[ks, js])

    y = _evaluate(model, X.reshape(M * (d - 1), n_o, n_i, d)).reshape(M, d - 1, n_o, n_i)
    cost = np.empty((M, d))
    cost[:, :d - 1] = np.var(y, axis=-1, ddof=1).mean(axis=-1)
    cost[:, d - 1] = v_y
    delta = np.diff(cost, axis=1, prepend=0.0)
    contrib = np.zeros((M, d))
    np.put_along_axis(contrib, perms, delta, axis=1)
    phi = contrib.mean(axis=0) / v_y
    se = contrib.std(axis=0, ddof=1) / math.sqrt(M) / v_y if M > 1 else np.full(d, np.nan)
    return ShapleyEstimate(spec.names, phi, se, v_y)
