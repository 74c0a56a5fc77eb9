"""Experiment harness: configuration, pipeline runner, reports and CLI."""

from .config import AttackSpec, ClassifierSpec, ConfigError, DatasetConfig, DefenseSpec, ExperimentConfig, load_config, parse_config
from .report import CSV_HEADER, EvaluationReport, ReportRow, emit_report, load_report
from .runner import Models, build_datasets, evaluate_attacks, run_attack, run_defense, run_experiment, train_models

__all__ = [
    "AttackSpec",
    "CSV_HEADER",
    "ClassifierSpec",
    "ConfigError",
    "DatasetConfig",
    "DefenseSpec",
    "EvaluationReport",
    "ExperimentConfig",
    "Models",
    "ReportRow",
    "build_datasets",
    "emit_report",
    "evaluate_attacks",
    "load_config",
    "load_report",
    "parse_config",
    "run_attack",
    "run_defense",
    "run_experiment",
    "train_models",
]
