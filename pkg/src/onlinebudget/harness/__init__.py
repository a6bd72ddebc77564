"""Scenario builders and the Monte Carlo runner."""

from .runner import ExperimentConfig, PolicySpec, TrialRecord, SummaryRow, run_experiment, scaling_study
from .scenarios import build_adversarial, build_exp1, build_exp2, build_finite_stationary, build_stationary_uniform, load_topology

__all__ = [
    "ExperimentConfig",
    "PolicySpec",
    "TrialRecord",
    "SummaryRow",
    "run_experiment",
    "scaling_study",
    "build_adversarial",
    "build_exp1",
    "build_exp2",
    "build_finite_stationary",
    "build_stationary_uniform",
    "load_topology",
]
