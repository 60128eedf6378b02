"""Experiment orchestration, reports, and the command line."""
from .config import KINDS, SCHEMA_VERSION, ConfigError, ExperimentConfig, load_config, resolve
from .experiment import (FAMILY_COLUMNS, HarnessError, Job, cross_eval, family_results, generate_data,
                         load_data, measure_experiment, plan_jobs, read_family_csv, run_experiment)
from .report import correlate, parse_report

__all__ = [
    "ConfigError", "ExperimentConfig", "FAMILY_COLUMNS", "HarnessError", "Job", "KINDS", "SCHEMA_VERSION",
    "correlate", "cross_eval", "family_results", "generate_data", "load_config", "load_data",
    "measure_experiment", "parse_report", "plan_jobs", "read_family_csv", "resolve", "run_experiment",
]
