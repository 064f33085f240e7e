"""Unbalanced multimarginal entropic optimal transport and matching
estimators of causal effects."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .divergences import Divergence, aprox, balanced, kl, parse_divergence, phi_divergence
from .exceptions import (InputError, NoOverlapError, NumericalError, OTMatchError,
                         SeparationError)
from .matching import (CausalEstimate, ConditionalWeights, att, ate, bias_diagnostic,
                       conditional_weights, expected_potential_outcome,
                       impute_counterfactual, joint_coupling, pairwise_couplings)
from .measures import (CostSpec, Dataset, DiscreteMeasure, build_cost, load_nsw,
                       split_by_treatment, standardize)
from .solver import (Coupling, SinkhornConfig, assemble_coupling, dual_objective,
                     exact_ot_bruteforce, foc_residual, ipfp, primal_objective,
                     softmin, solve)

__all__ = [
    "BACKEND", "Divergence", "aprox", "balanced", "kl", "parse_divergence",
    "phi_divergence", "InputError", "NoOverlapError", "NumericalError",
    "OTMatchError", "SeparationError", "CausalEstimate", "ConditionalWeights",
    "att", "ate", "bias_diagnostic", "conditional_weights",
    "expected_potential_outcome", "impute_counterfactual", "joint_coupling",
    "pairwise_couplings", "CostSpec", "Dataset", "DiscreteMeasure", "build_cost",
    "load_nsw", "split_by_treatment", "standardize", "Coupling", "SinkhornConfig",
    "assemble_coupling", "dual_objective", "exact_ot_bruteforce", "foc_residual",
    "ipfp", "primal_objective", "softmin", "solve",
]
