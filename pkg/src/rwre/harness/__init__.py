from rwre.harness.config import ConfigError, ExperimentConfig, parse_config
from rwre.harness.runner import run_experiment

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "run_experiment"]
