"""batsopt: optimal and sparse degree distributions for batched sparse codes."""

from ._accel import backend_name
from .degopt import (
    DegreeDistribution,
    DegreeOptResult,
    ProblemConfig,
    convergence_study,
    evaluate_rate,
    optimize_degree,
)
from .exact import ExactResult, bisection_max_rate
from .sim import SimulationReport, simulate_rate
from .sparse import (
    L1Options,
    SparseResult,
    reweighted_l1,
    sparsify_complementary,
    sparsify_trim,
)
from .specfun import (
    FieldParams,
    RankDistribution,
    decodability_vector,
    decode_weight_matrix,
    full_rank_probability,
    regularized_incomplete_beta,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "backend_name",
    "DegreeDistribution",
    "DegreeOptResult",
    "ProblemConfig",
    "convergence_study",
    "evaluate_rate",
    "optimize_degree",
    "ExactResult",
    "bisection_max_rate",
    "SimulationReport",
    "simulate_rate",
    "L1Options",
    "SparseResult",
    "reweighted_l1",
    "sparsify_complementary",
    "sparsify_trim",
    "FieldParams",
    "RankDistribution",
    "decodability_vector",
    "decode_weight_matrix",
    "full_rank_probability",
    "regularized_incomplete_beta",
]
