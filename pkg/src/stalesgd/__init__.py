"""Asynchronous SGD with a parameter server, n-softsync aggregation and
staleness-scaled learning rates, plus a deterministic cluster simulator."""

from .core import (
    GradientMessage,
    StalenessSample,
    StalenessSummary,
    StalenessTrace,
    VersionedWeights,
    compute_staleness,
    summarize_staleness,
)
from .lr import LearningRatePolicy, RateMode, StepDecay, effective_rate, epoch_of
from .objectives import LogisticRegression, ObjectiveSpec, Quadratic, TinyMLP, finite_difference_check
from .server import ParameterServer, ProtocolConfig
from .sim import LearnerModel, RunTrace, SimConfig, Stop, TimingModel, make_learners, run_concurrent, run_simulation

__version__ = "0.1.0"

__all__ = [
    "GradientMessage", "StalenessSample", "StalenessSummary", "StalenessTrace", "VersionedWeights",
    "compute_staleness", "summarize_staleness",
    "LearningRatePolicy", "RateMode", "StepDecay", "effective_rate", "epoch_of",
    "LogisticRegression", "ObjectiveSpec", "Quadratic", "TinyMLP", "finite_difference_check",
    "ParameterServer", "ProtocolConfig",
    "LearnerModel", "RunTrace", "SimConfig", "Stop", "TimingModel", "make_learners", "run_concurrent",
    "run_simulation",
]
