"""Shared fixtures: deterministic hypothesis profile and the expensive
acceptance-scale experiment runs, built once per session."""

from __future__ import annotations

import time

import pytest
from hypothesis import HealthCheck, settings

from disco.experiment import ExperimentConfig, run_experiment

settings.register_profile(
    "deterministic",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("deterministic")

ACCEPTANCE_SEEDS = (0, 1, 2, 3, 4)
ACCEPTANCE_SCENES = 1000


def acceptance_config(**overrides) -> ExperimentConfig:
    """The acceptance operating point: highest-noise hyperparameter row
    with the stress-test surrogate settings."""
    base = dict(
        noise_level=0.4,
        temperature=0.1,
        num_augmented=10,
        fusion_alpha=5.0,
        fusion_beta=0.8,
        est_weight=0.3,
        aug_weight=0.1,
        jitter=0.3,
        proposals_per_object=32,
        scenes=ACCEPTANCE_SCENES,
        seeds=ACCEPTANCE_SEEDS,
        passes=2,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def acceptance_runs():
    """Experiment reports for passes 1, 2, 3 at the acceptance settings,
    with per-run wall times for the runtime budgets."""
    runs = {}
    for passes in (1, 2, 3):
        start = time.perf_counter()
        report = run_experiment(acceptance_config(passes=passes))
        runs[passes] = (report, time.perf_counter() - start)
    return runs


@pytest.fixture(scope="session")
def phi_zero_control():
    """A small control run with the fusion weight forced to zero."""
    start = time.perf_counter()
    report = run_experiment(acceptance_config(scenes=100, seeds=(0,), force_phi_zero=True))
    return report, time.perf_counter() - start
