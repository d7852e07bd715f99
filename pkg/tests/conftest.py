import numpy as np
import pytest

from declqg import BlockDims, ProblemSpec, random_instance, validate

DIMS_ACCEPT = BlockDims(2, 2, 1, 1, 2, 2)
DIMS_SCALAR = BlockDims(1, 1, 1, 1, 1, 1)


def scalar_blocks(T, *, A=1.0, B=1.0, C=1.0, W=1.0, V=1.0, Q=1.0, R=1.0,
                  Sigma_init=0.0, P_final=1.0, mu=None):
    """Two identical decoupled scalar subsystems with the given parameters."""
    I2 = np.eye(2)
    return validate(ProblemSpec.from_arrays(
        DIMS_SCALAR, T, A=A * I2, B=B * I2, C=C * I2, W=W * I2, U=np.zeros((2, 2)),
        V=V * I2, Q=Q * I2, S=np.zeros((2, 2)), R=R * I2,
        Sigma_init=Sigma_init * I2, P_final=P_final * I2, mu_init=mu,
    ))


@pytest.fixture
def small():
    return validate(random_instance(5, DIMS_SCALAR, 3))


@pytest.fixture
def medium():
    return validate(random_instance(11, DIMS_ACCEPT, 5))


@pytest.fixture
def decoupled():
    return validate(random_instance(7, DIMS_ACCEPT, 5, coupling=0.0))


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert."""
    def record(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
