"""Numerical homogenization of stochastic Kelvin-Voigt wave equations with oscillating coefficients."""
from .expr import Expression, evaluate, parse_expression, substitute, to_source
from .mean_value import LimitAtInfinity, Periodic, QuasiPeriodic, mean_product
from .problem import ProblemDefinition, load_problem, problem_from_dict, validate_problem
from .cell_problem import CellGrid, correctors_basis, effective_tensor_field, solve_corrector
from .effective import EffectiveNonlinearity, build_effective_model, verify_structure
from .rng import WienerPath, sample_path
from .wave_sim import Macro, Micro, SpatialGrid, simulate
from .harness import emit_report, run_convergence_study, ucv_diagnostic, verify_apriori

__version__ = "0.1.0"

__all__ = [
    "Expression", "parse_expression", "evaluate", "substitute", "to_source",
    "Periodic", "QuasiPeriodic", "LimitAtInfinity", "mean_product",
    "ProblemDefinition", "load_problem", "problem_from_dict", "validate_problem",
    "CellGrid", "solve_corrector", "correctors_basis", "effective_tensor_field",
    "EffectiveNonlinearity", "build_effective_model", "verify_structure",
    "WienerPath", "sample_path",
    "SpatialGrid", "Micro", "Macro", "simulate",
    "run_convergence_study", "verify_apriori", "ucv_diagnostic", "emit_report",
]
