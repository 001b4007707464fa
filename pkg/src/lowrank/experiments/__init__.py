"""Config-driven experiment runner and CLI."""

from .config import ExperimentConfig, parse_config, serialize
from .presets import PRESETS, preset
from .runner import run_experiment, theory, verify

__all__ = ["ExperimentConfig", "PRESETS", "parse_config", "preset", "run_experiment", "serialize",
           "theory", "verify"]
