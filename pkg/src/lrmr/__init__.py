"""Low-rank matrix recovery: hard-thresholding and Riemannian solvers."""

from .errors import BackendError, ConfigError, ContractViolationError
from .harness import (
    ProblemSpec,
    bracket_rank,
    convergence_benchmark,
    generate_problem,
    is_success,
)
from .matcore import QRFactors, ThinSVD, hard_threshold, qr_thin, thin_svd
from .sensing import (
    EntrySensing,
    GaussianSensing,
    estimate_ric_lower_bound,
    operator_from_descriptor,
)
from .solvers import Algorithm, BetaRule, SolverConfig, SolverTrace, Status, solve
from .tangent import SubspaceSelection, TangentSpace, project, retract_fast
from .theory import GuaranteeInputs, GuaranteeReport, gamma_rcg, gamma_rgrad, recurrence_mu

__version__ = "0.1.0"

__all__ = [
    "Algorithm",
    "BackendError",
    "BetaRule",
    "ConfigError",
    "ContractViolationError",
    "EntrySensing",
    "GaussianSensing",
    "GuaranteeInputs",
    "GuaranteeReport",
    "ProblemSpec",
    "QRFactors",
    "SolverConfig",
    "SolverTrace",
    "Status",
    "SubspaceSelection",
    "TangentSpace",
    "ThinSVD",
    "bracket_rank",
    "convergence_benchmark",
    "estimate_ric_lower_bound",
    "gamma_rcg",
    "gamma_rgrad",
    "generate_problem",
    "hard_threshold",
    "is_success",
    "operator_from_descriptor",
    "project",
    "qr_thin",
    "recurrence_mu",
    "retract_fast",
    "solve",
    "thin_svd",
]
