"""Sensitivity analysis of stochastic simulators through two surrogates.

The simulator's internal randomness is treated as an extra "seed" factor.
By the law of total variance ``V(Y) = V(Y_m(X)) + E[Y_v(X)]``, where ``Y_m``
and ``Y_v`` are the conditional mean and variance of the output.  A GP on the
replicate means emulates ``Y_m`` and a log-variance GP emulates ``Y_v``; the
seed variable's total index is ``E[Y_v] / V(Y)``.

Surrogate error is not propagated into the reported standard errors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import DegenerateError, InputError, InputSpec, scale_design
from .gp import (GpModel, ReplicatedData, fit_gp, fit_variance_surrogate, predict,
                 stochastic_kriging_noise)
from .sampling import lhs_sample
from .sobol import (BootstrapResult, EstimatorOptions, SensitivityTable, _make_table,
                    _run_bootstrap, first_order, pick_freeze_design, pooled_variance, total_order)


@dataclass(frozen=True)
class StochasticSaResult:
    input_table: SensitivityTable
    s_t_eps: float
    s_t_eps_std_error: float
    v_mean: float
    e_var: float
    v_total: float
    simulator_calls: int = 0

    @property
    def variance_decomposition(self) -> dict:
        return {"v_mean": self.v_mean, "e_var": self.e_var, "v_total": self.v_total}

    def to_dict(self) -> dict:
        doc = self.input_table.to_dict()
        doc["s_t_eps"] = {"original": self.s_t_eps, "std.error": self.s_t_eps_std_error}
        doc["variance_decomposition"] = self.variance_decomposition
        if self.simulator_calls:
            doc["summary"]["simulator_calls"] = self.simulator_calls
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        return (self.input_table.to_text()
                + f"Seed variable total index S_T_eps: {self.s_t_eps:.3f} "
                  f"(std.error {self.s_t_eps_std_error:.3f})\n"
                + f"Variance: mean part {self.v_mean:.4g} + noise part {self.e_var:.4g} "
                  f"= {self.v_total:.4g}\n")


def stochastic_sobol(mean_model: GpModel, var_model: Optional[Callable], spec: InputSpec,
                     n: int = 8192, opts: Optional[EstimatorOptions] = None,
                     sampler: str = "sobol", seed: int = 0) -> StochasticSaResult:
    """Input indices on the mean surrogate plus the seed variable's total index.

    Indices are fractions of ``v_total = V(Y_m) + E[tau]``, both estimated on
    the same pick-freeze design (``E[tau]`` over its A and B blocks).
    ``var_model=None`` means a deterministic simulator.
    """
    opts = opts or EstimatorOptions()
    if n < 1000:
        raise InputError("stochastic SA needs n >= 1000 evaluation points")
    if spec.dependence is not None:
        raise InputError("stochastic SA assumes independent inputs")
    d = spec.d
    design = pick_freeze_design(n, d, sampler, seed)
    X = scale_design(design.rows, spec)
    ym = predict(mean_model, X).mean
    fA, fB, fAB = ym[:n], ym[n:2 * n], ym[2 * n:].reshape(d, n)
    if var_model is None:
        tA = tB = np.zeros(n)
    else:
        tau = np.asarray(var_model(X[:2 * n]), dtype=float)
        tA, tB = tau[:n], tau[n:]

    v_mean = pooled_variance(fA, fB)
    e_var = float(np.concatenate([tA, tB]).mean())
    v_total = v_mean + e_var
    if not v_total > 0:
        raise DegenerateError("total output variance is not positive")

    def statistic(idx):
        a, b, ab = fA[idx], fB[idx], fAB[:, idx]
        vt = pooled_variance(a, b) + np.concatenate([tA[idx], tB[idx]]).mean()
        ev = vt - pooled_variance(a, b)
        return np.concatenate([first_order(a, b, ab, vt, opts.first), total_order(a, ab, vt),
                               [ev / vt]])

    stat = _run_bootstrap(statistic, n, opts)
    if isinstance(stat, BootstrapResult):
        eps, eps_se = float(stat.original[-1]), float(stat.std_error[-1])
        table_stat = BootstrapResult(*(arr[:-1] for arr in (stat.original, stat.bias, stat.std_error,
                                                             stat.low_ci, stat.high_ci)),
                                     stat.replicates[:, :-1])
    else:
        eps, eps_se = float(stat[-1]), float("nan")
        table_stat = stat[:-1]
    table = _make_table(spec.names, table_stat, d, n * (d + 2), opts)
    return StochasticSaResult(table, eps, eps_se, v_mean, e_var, v_total)


def replicate_runs(simulator: Callable, X: np.ndarray, replicates: int, seed: int = 0) -> np.ndarray:
    """Run ``simulator(X, noise_seed)`` once per replicate; returns (sites, replicates)."""
    out = np.empty((X.shape[0], replicates))
    for r in range(replicates):
        noise_seed = int(np.random.SeedSequence([int(seed) % 2**64, 7, r]).generate_state(1)[0])
        y = np.asarray(simulator(X, noise_seed), dtype=float).reshape(-1)
        if y.size != X.shape[0] or not np.all(np.isfinite(y)):
            raise InputError("simulator returned the wrong number of outputs or non-finite values")
        out[:, r] = y
    return out


def end_to_end_stochastic_sa(simulator: Callable, spec: InputSpec, design_size: int,
                             replicates: int, n: int = 8192,
                             opts: Optional[EstimatorOptions] = None, kernel: str = "matern52",
                             restarts: int = 5, seed: int = 0) -> StochasticSaResult:
    """LHS design, replicated runs, stochastic kriging, two GP fits, then :func:`stochastic_sobol`.

    ``simulator(X, noise_seed)`` evaluates the rows of ``X`` (raw inputs)
    with its internal randomness driven by ``noise_seed``.
    """
    if replicates < 2:
        raise InputError("need at least two replicates per site")
    if design_size < 10 * spec.d:
        raise InputError(f"design_size must be at least 10 * d = {10 * spec.d}")
    X = scale_design(lhs_sample(design_size, spec.d, seed).points, spec)
    runs = replicate_runs(simulator, X, replicates, seed)
    sk = stochastic_kriging_noise(ReplicatedData.from_matrix(X, runs))
    mean_noise = sk.mean_noise
    if np.all(mean_noise == 0):
        mean_gp = fit_gp(X, sk.mean_outputs, noise="zero", kernel=kernel, restarts=restarts, seed=seed)
    else:
        mean_gp = fit_gp(X, sk.mean_outputs, noise=mean_noise, kernel=kernel, restarts=restarts,
                         seed=seed)
    var_model = fit_variance_surrogate(X, sk.noise_estimates, sk.counts, sk.mean_outputs,
                                       kernel=kernel, restarts=restarts, seed=seed)
    res = stochastic_sobol(mean_gp, var_model, spec, n, opts, seed=seed)
    return StochasticSaResult(res.input_table, res.s_t_eps, res.s_t_eps_std_error, res.v_mean,
                              res.e_var, res.v_total, design_size * replicates)
