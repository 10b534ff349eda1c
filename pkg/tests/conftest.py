"""Shared fixtures for the blackcal test suite."""

from __future__ import annotations

import numpy as np
import pytest

from blackcal.core_types import PiecewiseDensity


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def uniform01():
    """Uniform density on [0, 1] with 50 equal bins."""
    return PiecewiseDensity.uniform(0.0, 1.0, 50)


@pytest.fixture
def two_bin():
    """Masses (0.8, 0.2) on [0, 0.5, 1]."""
    return PiecewiseDensity(np.array([0.0, 0.5, 1.0]), np.array([0.8, 0.2]))


def random_density(rng, bins=20, lo=0.0, hi=1.0, alpha=1.0):
    """Dirichlet masses on equal bins."""
    return PiecewiseDensity(np.linspace(lo, hi, bins + 1), rng.dirichlet(np.full(bins, alpha)))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def record_criterion(number: int, ok: bool, text: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {text}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
