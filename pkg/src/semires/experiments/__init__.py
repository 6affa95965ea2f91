"""Experiment drivers: gluing, billiard scans, config loading and the runner."""

from .settings import ExperimentConfig, load_config, parse_config, validate
from .runner import RunResult, execute, run

__all__ = ["ExperimentConfig", "load_config", "parse_config", "validate", "RunResult", "execute", "run"]
