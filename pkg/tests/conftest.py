import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nlmarkov.grid import Grid, GridDensity

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.register_profile("thorough", max_examples=300, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[number] = (passed, detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def unit_grid():
    return Grid(-5.0, 5.0, 200)


def gaussian_density(grid: Grid, mean: float = 0.0, var: float = 1.0) -> GridDensity:
    from scipy import special

    F = special.ndtr((grid.edges - mean) / np.sqrt(var))
    vals = np.diff(F) / grid.h
    return GridDensity(grid, vals / (vals.sum() * grid.h))
