"""Driver, sweeps, prediction reports and the command line."""
from __future__ import annotations

from .config import ConfigError, RunConfig, config_from_mapping, config_to_text, load_config
from .driver import (
    ConvergenceError, PredictReport, RunError, RunSummary, SweepResult, predict_report, run,
    select_decomposition, sweep,
)

__all__ = [
    "ConfigError", "RunConfig", "config_from_mapping", "config_to_text", "load_config",
    "ConvergenceError", "PredictReport", "RunError", "RunSummary", "SweepResult",
    "predict_report", "run", "select_decomposition", "sweep",
]
