"""Shared pytest plumbing: the acceptance-criterion summary report.

Acceptance tests record one line per criterion through the `criterion`
fixture; the lines are echoed in a dedicated terminal section after the
run so the pass/fail verdicts survive output capture.
"""
import pytest

_CRITERION_LINES = []


@pytest.fixture(scope="session")
def criterion():
    """Record `criterion N: PASS/FAIL - detail` for the final summary."""

    def record(number: int, passed: bool, detail: str) -> bool:
        verdict = "PASS" if passed else "FAIL"
        line = f"criterion {number}: {verdict} - {detail}"
        _CRITERION_LINES.append((number, line))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERION_LINES):
        terminalreporter.write_line(line)
