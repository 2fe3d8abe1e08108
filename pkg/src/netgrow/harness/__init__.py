"""Datasets, configuration, checkpoints and the growth experiment driver."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .data import Dataset, gen_blobs, gen_synthetic_regression, load_idx, parse_data_spec
from .experiment import RunLogRecord, read_log, run_growth_experiment, run_many

__all__ = [
    "ConfigError", "Dataset", "ExperimentConfig", "RunLogRecord", "gen_blobs",
    "gen_synthetic_regression", "load_checkpoint", "load_config", "load_idx", "parse_config",
    "parse_data_spec", "read_log", "run_growth_experiment", "run_many", "save_checkpoint",
]
