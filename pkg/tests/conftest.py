import os

import pytest

# One line per acceptance criterion, filled by test_acceptance.py.
ACCEPTANCE_LINES = {}


def record(criterion: int, passed, detail: str) -> None:
    """Store the summary line; ``passed=None`` marks a skipped criterion."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion}: {status}  {detail}"


def skip_unless_slow():
    return pytest.mark.skipif(not os.environ.get("ROBCUSUM_SLOW"),
                              reason="set ROBCUSUM_SLOW=1 for long grid-refinement runs")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
