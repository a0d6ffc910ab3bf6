"""Linear-quadratic mean field games with a major player.

Three independent routes to the same limiting control problem (a
consistency fixed point, a quadratic value-function expansion, and a
finite-population Riccati hierarchy with its low-dimensional limit),
plus closed-loop Monte Carlo simulation to check mean-field consistency
against finite populations.
"""

from .asymptotic import (FiniteNSolution, LambdaSolution, PhiSolution,
                         SolvabilityReport, StructureReport,
                         assemble_finite_n, check_asymptotic_solvability,
                         compare_lambda_phi, extract_block_structure,
                         phi_from_nce, solve_finite_n, solve_lambda)
from .errors import (AsymmetryDrift, BadPi, BlowUp, DimensionMismatch,
                     EmptyBatch, EmptyType, GridMismatch, IndexOutOfRange,
                     KNotOne, LQMFGError, ModelFileError, NonFiniteField,
                     NonFiniteState, NotPD, NotPSD, NTooLargeForMemory,
                     PermutationMismatch, SeedStreamExhausted, TimeOutOfRange)
from .master import (DiffReport, MasterSolution, ResidualSample,
                     compare_nce_master, master_feedback, master_residual,
                     residual_sample, solve_master)
from .model import (ModelParams, PiLifted, TimeGrid, ValidatedModel,
                    block_selector, default_steps, lift_pi, validate_model)
from .modelfile import load_model, parse_model_file, write_model_file
from .nce import NCESolution, nce_feedback, propagate_mean_field, solve_nce
from .ode import (BlowUpReport, MatrixPath, integrate_backward,
                  integrate_forward)
from .sim import (CostEstimate, MeanFieldError, Trajectory,
                  default_type_counts, empirical_mean_error, evaluate_cost,
                  simulate)

__all__ = [
    "AsymmetryDrift", "BadPi", "BlowUp", "BlowUpReport", "CostEstimate",
    "DiffReport", "DimensionMismatch", "EmptyBatch", "EmptyType",
    "FiniteNSolution", "GridMismatch", "IndexOutOfRange", "KNotOne",
    "LQMFGError", "LambdaSolution", "MasterSolution", "MatrixPath",
    "MeanFieldError", "ModelFileError", "ModelParams", "NCESolution",
    "NTooLargeForMemory", "NonFiniteField", "NonFiniteState", "NotPD",
    "NotPSD", "PermutationMismatch", "PhiSolution", "PiLifted",
    "ResidualSample", "SeedStreamExhausted", "SolvabilityReport",
    "StructureReport", "TimeGrid", "TimeOutOfRange", "Trajectory",
    "ValidatedModel", "assemble_finite_n", "block_selector",
    "check_asymptotic_solvability", "compare_lambda_phi",
    "compare_nce_master", "default_steps", "default_type_counts",
    "empirical_mean_error", "evaluate_cost", "extract_block_structure",
    "integrate_backward", "integrate_forward", "lift_pi", "load_model",
    "master_feedback", "master_residual", "nce_feedback",
    "parse_model_file", "phi_from_nce", "propagate_mean_field",
    "residual_sample", "simulate", "solve_finite_n", "solve_lambda",
    "solve_master", "solve_nce", "validate_model", "write_model_file",
]

__version__ = "0.1.0"
