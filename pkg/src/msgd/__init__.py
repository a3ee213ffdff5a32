"""Simulation of users choosing among competing learners.

Each arriving user picks the service that serves them best (up to a
rationality parameter) and only that service learns from them.
"""

from .choice import ChoicePolicy, best_index, choice_probabilities, sample_index, select
from .data import DataError, DatasetSpec, generate, read_csv, write_csv
from .engine import EventRecord, InitSpec, NonFiniteError, RunConfig, RunResult, full_info_step, minibatch_step, msgd_step, run
from .loss import LossModel, estimate_constants, loss_for_population
from .metrics import ComparisonTable, TrajectoryRecord, accuracies, compare, displacement_series, subpop_accuracy_unweighted
from .objective import (
    ObjectiveReport,
    PartitionSummary,
    boundary_margin,
    closed_form_1d,
    evaluate,
    gradient_f,
    partition,
    partition_upper_bound,
    stationarity_residual,
)
from .types import DataPoint, DomainError, ModelBank, Population, RandomSource, StepSchedule, step_size

__version__ = "0.1.0"

__all__ = [
    "ChoicePolicy",
    "ComparisonTable",
    "DataError",
    "DataPoint",
    "DatasetSpec",
    "DomainError",
    "EventRecord",
    "InitSpec",
    "LossModel",
    "ModelBank",
    "NonFiniteError",
    "ObjectiveReport",
    "PartitionSummary",
    "Population",
    "RandomSource",
    "RunConfig",
    "RunResult",
    "StepSchedule",
    "TrajectoryRecord",
    "accuracies",
    "best_index",
    "boundary_margin",
    "choice_probabilities",
    "closed_form_1d",
    "compare",
    "displacement_series",
    "estimate_constants",
    "evaluate",
    "full_info_step",
    "generate",
    "gradient_f",
    "loss_for_population",
    "minibatch_step",
    "msgd_step",
    "partition",
    "partition_upper_bound",
    "read_csv",
    "run",
    "sample_index",
    "select",
    "stationarity_residual",
    "subpop_accuracy_unweighted",
    "step_size",
    "write_csv",
]
