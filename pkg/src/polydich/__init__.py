"""Numerical certification of polynomial dichotomies for evolution families on [1, inf)."""

__version__ = "0.1.0"

from .admissibility import (GridFunction, admissibility_probe, default_battery, green_solve, sliding_L1_norm,
                            sup_norm, time_grid, uniqueness_probe, verify_solution)
from .dichotomy import (DichotomyCertificate, ProjectionFamily, certify, fit_bounded_growth, fit_dichotomy,
                        projection_norm_bound, projections_from_splitting, splitting_projection,
                        stable_subspace, unstable_subspace_from_Z)
from .evolution import (EvolutionFamily, ScenarioSpec, check_cocycle, from_generator, operator_norm,
                        scenario)
from .norms import NormFamily, check_norm_equivalence, constant_norm, lyapunov_norm, strong_lyapunov_norm
from .robustness import (PerturbationFamily, check_operator_D_estimate, check_perturbation_bound,
                         gronwall_growth_check, perturbed_family, robustness_experiment, scalar_perturbation)

__all__ = [
    "DichotomyCertificate", "EvolutionFamily", "GridFunction", "NormFamily", "PerturbationFamily",
    "ProjectionFamily", "ScenarioSpec", "admissibility_probe", "certify", "check_cocycle",
    "check_norm_equivalence", "check_operator_D_estimate", "check_perturbation_bound", "constant_norm",
    "default_battery", "fit_bounded_growth", "fit_dichotomy", "from_generator", "green_solve",
    "gronwall_growth_check", "lyapunov_norm", "operator_norm", "perturbed_family", "projection_norm_bound",
    "projections_from_splitting", "robustness_experiment", "scalar_perturbation", "scenario",
    "sliding_L1_norm", "splitting_projection", "stable_subspace", "strong_lyapunov_norm", "sup_norm",
    "time_grid", "uniqueness_probe", "unstable_subspace_from_Z", "verify_solution",
]
