"""Shared fixtures and the acceptance-criteria summary hook."""

import numpy as np
import pytest

from rlmpc import StageCost, SystemModel, box, synthesize_terminal_pair

# filled by the acceptance tests, rendered after the test run
_CRITERIA: dict[int, str] = {}


def _record(num: int, ok: bool, detail: str) -> None:
    _CRITERIA[num] = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}: {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for num in sorted(_CRITERIA):
            terminalreporter.line(_CRITERIA[num])


@pytest.fixture(scope="session")
def criterion():
    """Recorder for one acceptance-criterion line: criterion(n, ok, detail)."""
    return _record


@pytest.fixture(scope="session")
def di_model():
    # constrained double integrator under bounded additive disturbance
    a = np.array([[1.0, 1.0], [0.0, 1.0]])
    b = np.array([[0.0], [1.0]])
    return SystemModel(a, b, state_set=box(10.0, 2), input_set=box(1.0, 1),
                       disturbance_set=box(0.1, 2))


@pytest.fixture(scope="session")
def di_pair(di_model):
    return synthesize_terminal_pair(di_model)


@pytest.fixture(scope="session")
def di_cost():
    return StageCost(state_weight=10.0, input_weight=1.0,
                     norm_mode="euclidean")


@pytest.fixture(scope="session")
def int_model():
    # scalar integrator, small disturbance: cheap end-to-end instance
    return SystemModel(np.array([[1.0]]), np.array([[1.0]]),
                       state_set=box(4.0, 1), input_set=box(1.0, 1),
                       disturbance_set=box(0.05, 1))


@pytest.fixture(scope="session")
def int_pair(int_model):
    return synthesize_terminal_pair(int_model)


@pytest.fixture(scope="session")
def int_cost():
    return StageCost(state_weight=2.0, input_weight=1.0,
                     norm_mode="polyhedral-inf")
