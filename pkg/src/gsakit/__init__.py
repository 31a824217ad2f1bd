"""Variance-based global sensitivity analysis.

Sobol' indices from pick-freeze designs, Shapley effects for dependent
Gaussian inputs, and GP-emulator based analysis of stochastic simulators.
"""

__version__ = "0.1.0"

from .core import (DegenerateError, ExternalModelError, Gaussian, GaussianDependence, GsaError,
                   InputError, InputSpec, Uniform, condition_gaussian, inverse_cdf, scale_design)
from .gp import (GpModel, Kernel, ReplicatedData, fit_gp, fit_variance_surrogate, kernel_eval,
                 predict, stochastic_kriging_noise)
from .sampling import (UnitDesign, l2_star_discrepancy, lhs_sample, mc_sample, sobol_sequence)
from .shapley import (GameSpec, ShapleyConfig, ShapleyEstimate, castro_shapley, estimate_shapley,
                      exact_shapley, nu2_estimate, permutation_shapley)
from .sobol import (EstimatorOptions, PickFreezeDesign, SensitivityTable, bootstrap,
                    build_pick_freeze, dependent_indices, estimate_indices, pick_freeze_design,
                    sobol_indices)
from .stochsa import StochasticSaResult, end_to_end_stochastic_sa, stochastic_sobol
from .testbed import analytic_indices, eval_model, get_model, uniform_moment
