import numpy as np
import pytest

from qcelast.torus import Grid

# one summary line per acceptance criterion, filled from test reports
_ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    status = "PASS" if report.passed else "FAIL"
    detail = "; ".join(props.get("checks", []))
    _ACCEPTANCE_LINES[props["criterion"]] = f"[{status}] criterion {props['criterion']:>2}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[k])


@pytest.fixture
def grid32():
    return Grid(d=2, n=32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
