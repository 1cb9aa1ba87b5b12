"""Experiment harness: configs, sweeps, result tables and the CLI."""

from .config import ExperimentConfig, config_from_dict, load_config
from .experiments import run_experiment, verify_against_analytic
from .tables import COLUMNS, emit_table, read_table

__all__ = ["ExperimentConfig", "config_from_dict", "load_config", "run_experiment",
           "verify_against_analytic", "COLUMNS", "emit_table", "read_table"]
