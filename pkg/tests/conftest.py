import sys

import pytest

from lcpvol.calibration import CalibConfig, calibrate


@pytest.fixture(scope="session")
def published_crits():
    return calibrate(CalibConfig(replicates=20_000, seed=1))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
