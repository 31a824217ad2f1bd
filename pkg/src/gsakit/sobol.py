"""First- and total-order Sobol' indices from pick-freeze designs.

The design stacks ``[A; B; A_B^(1); ...; A_B^(d)]`` where ``A_B^(i)`` is ``A``
with its i-th column taken from ``B``.  Model outputs must be supplied in the
same row order.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import DegenerateError, InputError, InputSpec, cholesky_psd, norm_ppf
from .sampling import UnitDesign, format_float, make_rng, sample

FIRST_ORDER = ("saltelli", "jansen")
TOTAL_ORDER = ("jansen",)


@dataclass(frozen=True)
class EstimatorOptions:
    first: str = "saltelli"
    total: str = "jansen"
    R: int = 1000
    level: float = 0.95
    ci: str = "norm"
    seed: int = 0

    def __post_init__(self):
        if self.first not in FIRST_ORDER:
            raise InputError(f"first-order estimator must be one of {FIRST_ORDER}")
        if self.total not in TOTAL_ORDER:
            raise InputError(f"total-order estimator must be one of {TOTAL_ORDER}")
        if self.R != 0 and self.R < 2:
            raise InputError("bootstrap needs R >= 2 (or R = 0 to skip it)")
        if not 0.0 < self.level < 1.0:
            raise InputError("confidence level must lie in (0, 1)")
        if self.ci not in ("norm", "percent"):
            raise InputError("ci must be 'norm' or 'percent'")


@dataclass(frozen=True)
class PickFreezeDesign:
    rows: np.ndarray
    n: int
    d: int

    def block(self, k: int) -> np.ndarray:
        """Block ``k``: 0 is A, 1 is B, ``i + 2`` is ``A_B^(i)``."""
        return self.rows[k * self.n:(k + 1) * self.n]

    @property
    def A(self) -> np.ndarray:
        return self.block(0)

    @property
    def B(self) -> np.ndarray:
        return self.block(1)

    def __len__(self) -> int:
        return self.rows.shape[0]


def build_pick_freeze(A, B) -> PickFreezeDesign:
    A = A.points if isinstance(A, UnitDesign) else np.asarray(A, dtype=float)
    B = B.points if isinstance(B, UnitDesign) else np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape != B.shape:
        raise InputError(f"A and B must have the same 2-D shape, got {A.shape} and {B.shape}")
    n, d = A.shape
    rows = np.empty((n * (d + 2), d))
    rows[:n] = A
    rows[n:2 * n] = B
    for i in range(d):
        blk = rows[(i + 2) * n:(i + 3) * n]
        blk[:] = A
        blk[:, i] = B[:, i]
    rows.setflags(write=False)
    return PickFreezeDesign(rows, n, d)


def pick_freeze_design(n: int, d: int, sampler: str = "sobol", seed: int = 0) -> PickFreezeDesign:
    """Unit-cube pick-freeze design; A and B are the two halves of a 2d-column sample."""
    base = sample(sampler, n, 2 * d, seed).points
    return build_pick_freeze(base[:, :d], base[:, d:])


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BootstrapResult:
    original: np.ndarray
    bias: np.ndarray
    std_error: np.ndarray
    low_ci: np.ndarray
    high_ci: np.ndarray
    replicates: np.ndarray = field(repr=False)


def bootstrap(statistic: Callable[[np.ndarray], np.ndarray], n_rows: int, R: int,
              level: float = 0.95, seed: int = 0, ci: str = "norm") -> BootstrapResult:
    """Nonparametric bootstrap over row indices ``0..n_rows-1``.

    ``statistic(idx)`` must return a 1-D array; ``idx = arange(n_rows)`` gives
    the original estimate.  Replicate ``r`` draws its indices from its own
    stream ``make_rng(seed, r)``.  The ``"norm"`` interval is
    ``original - bias -/+ z * std_error``; ``"percent"`` uses the replicate
    quantiles.
    """
    if R < 2:
        raise InputError("bootstrap needs at least 2 replicates")
    original = np.atleast_1d(np.asarray(statistic(np.arange(n_rows)), dtype=float))
    boot = np.empty((R, original.size))
    for r in range(R):
        idx = make_rng(seed, r).integers(0, n_rows, n_rows)
        boot[r] = statistic(idx)
    bias = boot.mean(axis=0) - original
    se = boot.std(axis=0, ddof=1)
    if ci == "norm":
        z = norm_ppf(0.5 * (1.0 + level))
        center = original - bias
        low, high = center - z * se, center + z * se
    elif ci == "percent":
        low = np.quantile(boot, 0.5 * (1.0 - level), axis=0)
        high = np.quantile(boot, 0.5 * (1.0 + level), axis=0)
    else:
        raise InputError("ci must be 'norm' or 'percent'")
    return BootstrapResult(original, bias, se, low, high, boot)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def first_order(fA, fB, fAB, var, method: str = "saltelli") -> np.ndarray:
    """First-order indices; ``fAB`` has shape ``(d, N)``."""
    if method == "saltelli":
        return np.mean(fB * (fAB - fA), axis=1) / var
    if method == "jansen":
        return 1.0 - 0.5 * np.mean((fB - fAB) ** 2, axis=1) / var
    raise InputError(f"unknown first-order estimator {method!r}")


def total_order(fA, fAB, var) -> np.ndarray:
    return 0.5 * np.mean((fA - fAB) ** 2, axis=1) / var


def pooled_variance(fA, fB) -> float:
    return float(np.var(np.concatenate([fA, fB]), ddof=1))


def split_outputs(Y, n: int, d: int):
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if n < 2 or d < 1:
        raise InputError("need n >= 2 and d >= 1")
    if Y.size != n * (d + 2):
        raise InputError(f"expected {n * (d + 2)} outputs for n={n}, d={d}; got {Y.size}")
    if not np.all(np.isfinite(Y)):
        raise InputError("model outputs contain non-finite values")
    return Y[:n], Y[n:2 * n], Y[2 * n:].reshape(d, n)


def _check_variance(var: float, scale: float) -> None:
    if not var > (1e-12 * max(scale, 1e-300)) ** 2:
        raise DegenerateError("degenerate variance: output variance is zero, the model is constant over the design")


@dataclass(frozen=True)
class IndexRow:
    parameter: str
    kind: str
    original: float
    bias: float
    std_error: float
    low_ci: float
    high_ci: float


@dataclass(frozen=True)
class SensitivityTable:
    rows: tuple
    sum_first_order: float
    total_model_runs: int
    estimators: str
    extra: dict = field(default_factory=dict)

    def values(self, kind: str) -> np.ndarray:
        return np.array([r.original for r in self.rows if r.kind == kind])

    @property
    def Si(self) -> np.ndarray:
        return self.values("Si")

    @property
    def Ti(self) -> np.ndarray:
        return self.values("Ti")

    def column(self, kind: str, attr: str) -> np.ndarray:
        return np.array([getattr(r, attr) for r in self.rows if r.kind == kind])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", "sensitivity", "original", "bias", "std.error", "low.ci", "high.ci"])
        for r in self.rows:
            w.writerow([r.parameter, r.kind] + [format_float(v) for v in
                        (r.original, r.bias, r.std_error, r.low_ci, r.high_ci)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        doc = {
            "summary": {"sum_first_order": self.sum_first_order,
                        "total_model_runs": self.total_model_runs,
                        "estimators": self.estimators},
            "results": [{"parameter": r.parameter, "sensitivity": r.kind, "original": r.original,
                         "bias": r.bias, "std.error": r.std_error, "low.ci": r.low_ci,
                         "high.ci": r.high_ci} for r in self.rows],
        }
        doc.update(self.extra)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = ["", self.estimators, "", f"Total number of model runs: {self.total_model_runs}", "",
                 f"Sum of first order indices: {self.sum_first_order:.7f}"]
        width = max([len(r.parameter) for r in self.rows] + [10])
        lines.append(f"{'':>3} {'original':>8} {'bias':>6} {'std.error':>9} {'low.ci':>7} "
                     f"{'high.ci':>7} {'sensitivity':>11} {'parameters':>{width}}")
        for k, r in enumerate(self.rows, 1):
            lines.append(f"{k:>2}: {r.original:8.3f} {r.bias:6.3f} {r.std_error:9.3f} {r.low_ci:7.3f} "
                         f"{r.high_ci:7.3f} {r.kind:>11} {r.parameter:>{width}}")
        return "\n".join(lines) + "\n"


def _make_table(names, stat: BootstrapResult | np.ndarray, d: int, runs: int, opts,
                kinds=("Si", "Ti"), extra=None) -> SensitivityTable:
    if isinstance(stat, BootstrapResult):
        cols = (stat.original, stat.bias, stat.std_error, stat.low_ci, stat.high_ci)
    else:
        nan = np.full(stat.size, np.nan)
        cols = (stat, nan, nan, nan, nan)
    rows = []
    for k, kind in enumerate(kinds):
        for i in range(d):
            j = k * d + i
            rows.append(IndexRow(names[i], kind, *(float(c[j]) for c in cols)))
    si_sum = float(np.sum(cols[0][:d])) if "Si" in kinds else float("nan")
    est = f"First-order estimator: {opts.first} | Total-order estimator: {opts.total}"
    return SensitivityTable(tuple(rows), si_sum, runs, est, dict(extra or {}))


def _run_bootstrap(statistic, n: int, opts: EstimatorOptions):
    if opts.R == 0:
        return statistic(np.arange(n))
    return bootstrap(statistic, n, opts.R, opts.level, opts.seed, opts.ci)


def estimate_indices(Y, n: int, d: int, opts: Optional[EstimatorOptions] = None,
                     names: Optional[Sequence[str]] = None) -> SensitivityTable:
    """Estimate Si and Ti from outputs ordered like a :class:`PickFreezeDesign`.

    Both indices are normalized by the unbiased variance of the 2N outputs
    of blocks A and B.  Bootstrap replicates resample rows jointly across
    all blocks.  ``opts.R = 0`` skips the bootstrap (NaN errors and CIs).
    """
    opts = opts or EstimatorOptions()
    fA, fB, fAB = split_outputs(Y, n, d)
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(d)]
    if len(names) != d:
        raise InputError("need one name per factor")
    var = pooled_variance(fA, fB)
    _check_variance(var, float(np.max(np.abs(np.concatenate([fA, fB])))))

    def statistic(idx):
        a, b, ab = fA[idx], fB[idx], fAB[:, idx]
        v = pooled_variance(a, b)
        return np.concatenate([first_order(a, b, ab, v, opts.first), total_order(a, ab, v)])

    stat = _run_bootstrap(statistic, n, opts)
    return _make_table(names, stat, d, n * (d + 2), opts)


def sobol_indices(model: Callable[[np.ndarray], np.ndarray], spec: InputSpec, n: int,
                  sampler: str = "sobol", seed: int = 0,
                  opts: Optional[EstimatorOptions] = None) -> SensitivityTable:
    """Build a design, scale it to ``spec``, evaluate ``model`` and estimate indices."""
    from .core import scale_design

    if spec.dependence is not None:
        raise InputError("pick-freeze estimation assumes independent inputs; "
                         "use dependent_indices for correlated Gaussian inputs")
    design = pick_freeze_design(n, spec.d, sampler, seed)
    Y = np.asarray(model(scale_design(design.rows, spec)), dtype=float)
    return estimate_indices(Y, n, spec.d, opts, spec.names)


def dependent_indices(model: Callable[[np.ndarray], np.ndarray], spec: InputSpec, n: int,
                      sampler: str = "sobol", seed: int = 0,
                      opts: Optional[EstimatorOptions] = None) -> SensitivityTable:
    """Sobol' indices for correlated Gaussian inputs.

    For factor ``i`` the inputs are generated through the Cholesky factor of
    the covariance reordered so that ``i`` comes first; freezing its
    innovation then freezes ``X_i`` while the others are redrawn from their
    conditional law, and the pick-freeze first-order estimator yields
    ``V(E[Y | X_i]) / V(Y)``.  Placing ``i`` last instead isolates the part of
    ``X_i`` independent of the rest, and the total-order estimator yields
    ``E[V(Y | X_~i)] / V(Y)``.
    """
    opts = opts or EstimatorOptions()
    dep = spec.dependence
    if dep is None:
        return sobol_indices(model, spec, n, sampler, seed, opts)
    d = spec.d
    base = sample(sampler, n, 2 * d, seed).points
    ZA, ZB = norm_ppf(base[:, :d]), norm_ppf(base[:, d:])

    def to_x(Z, order):
        L = cholesky_psd(dep.cov[np.ix_(order, order)])
        X = np.empty_like(Z)
        X[:, order] = dep.mean[order] + Z @ L.T
        return X

    fA_first, fB_first, fAB_first = np.empty((d, n)), np.empty((d, n)), np.empty((d, n))
    fA_last, fAB_last = np.empty((d, n)), np.empty((d, n))
    for i in range(d):
        others = [j for j in range(d) if j != i]
        first, last = [i] + others, others + [i]
        ZAB = ZA.copy()
        ZAB[:, 0] = ZB[:, 0]
        fA_first[i] = model(to_x(ZA, first))
        fB_first[i] = model(to_x(ZB, first))
        fAB_first[i] = model(to_x(ZAB, first))
        ZAB = ZA.copy()
        ZAB[:, d - 1] = ZB[:, d - 1]
        fA_last[i] = model(to_x(ZA, last))
        fAB_last[i] = model(to_x(ZAB, last))
    for arr in (fA_first, fB_first, fAB_first, fA_last, fAB_last):
        if not np.all(np.isfinite(arr)):
            raise InputError("model outputs contain non-finite values")
    var0 = pooled_variance(fA_first.ravel(), fB_first.ravel())
    _check_variance(var0, float(np.max(np.abs(fA_first))))

    def statistic(idx):
        a, b, ab = fA_first[:, idx], fB_first[:, idx], fAB_first[:, idx]
        var = pooled_variance(a.ravel(), b.ravel())
        if opts.first == "saltelli":
            si = np.mean(b * (ab - a), axis=1) / var
        else:
            si = 1.0 - 0.5 * np.mean((b - ab) ** 2, axis=1) / var
        ti = 0.5 * np.mean((fA_last[:, idx] - fAB_last[:, idx]) ** 2, axis=1) / var
        return np.concatenate([si, ti])

    stat = _run_bootstrap(statistic, n, opts)
    return _make_table(spec.names, stat, d, 5 * n * d, opts)
