import numpy as np
import pytest

from rbal.decision import builtin_process


@pytest.fixture(scope="session")
def synthetic_process():
    return builtin_process("synthetic")


@pytest.fixture(scope="session")
def z24_process():
    return builtin_process("z24")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tables(proc):
    """Plain-list copies of a process's tables for the loop oracles."""
    return (proc.action_utilities.tolist(), proc.state_utilities.tolist(), proc.transitions.tolist())


# one pass/fail line per acceptance criterion, printed after the test report
VERDICTS: list = []


@pytest.fixture
def verdict():
    def record(criterion, passed, detail=""):
        status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
        VERDICTS.append(f"criterion {criterion}: {status}  {detail}".rstrip())
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
