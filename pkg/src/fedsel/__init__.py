"""Simulator for federated client selection under volatile edge resources."""

from .core import ConfigError, ExperimentConfig, SelectionLedger, cohort_size, derive_stream
from .federation import RoundRecord, run_experiment

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RoundRecord",
    "SelectionLedger",
    "cohort_size",
    "derive_stream",
    "run_experiment",
]

__version__ = "0.1.0"
