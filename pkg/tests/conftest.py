from __future__ import annotations

import numpy as np
import pytest

from pobayes.datagen import CaseControlSample, ScenarioSpec, generate_population, sample_design


@pytest.fixture(scope="session")
def small_population():
    return generate_population(ScenarioSpec.named("i", N=3000, seed=20240601))


@pytest.fixture
def small_sample(small_population):
    return sample_design(small_population, 100, seed=7)


def make_sample(x: np.ndarray, z: np.ndarray) -> CaseControlSample:
    """Presence-only sample from raw covariates, presence rows first."""
    order = np.argsort(-np.asarray(z), kind="stable")
    return CaseControlSample(unit_id=np.arange(len(z)), x=np.asarray(x, float)[order], z=np.asarray(z)[order])


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def record_criterion(label: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE_LINES.append(f"{label}: {'PASS' if passed else 'FAIL'} | {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
