"""Federated learning with head-only sharing and curriculum knowledge
distillation, simulated on small MLPs."""

from .clkd import (
    CurriculumSchedule,
    MaskedBatchLoss,
    SimilarityMetric,
    adjustable_threshold,
    clkd_loss,
    combined_objective,
    kept_count,
    mutual_eval_scores,
)
from .config import ExperimentConfig, parse_config
from .federation import (
    ClientState,
    FederationSettings,
    LocalHyper,
    Method,
    RoundReport,
    aggregate_heads,
    communication_accounting,
    local_round,
    run_federation,
)
from .kernels import BACKEND
from .model import Architecture, DecoupledModel, HeadSnapshot, ParamSnapshot, forward_dual, generate_hetero_arch, head_fraction
from .stats import students_t_test
from .suite import run_suite

__version__ = "0.1.0"
