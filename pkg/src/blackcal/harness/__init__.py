"""Data, experts, adversaries and experiment orchestration."""

from .data import SeriesConfig, lag_features, load_series, synthetic
from .experiment import ExperimentConfig, load_config, run_experiment
from .experts import Expert, expert_forecast
from .nature import PayoffNature, QceNature, adversarial_nature

__all__ = [
    "Expert",
    "ExperimentConfig",
    "PayoffNature",
    "QceNature",
    "SeriesConfig",
    "adversarial_nature",
    "expert_forecast",
    "lag_features",
    "load_config",
    "load_series",
    "run_experiment",
    "synthetic",
]
