import pathlib

import pytest

GOLDEN = pathlib.Path(__file__).parent / "golden"

# filled by tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE_RESULTS = []


@pytest.fixture
def golden_dir():
    return GOLDEN


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {name} ({detail})")
