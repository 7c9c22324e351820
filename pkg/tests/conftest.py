"""Shared pytest plumbing.

Every test runs against a clean autodiff tape, and the acceptance module
reports one line per criterion in the terminal summary so the verdicts
are visible even with output capture on.
"""

import pytest

import affectseq.autodiff as ad

#: Filled by tests/test_acceptance.py; printed after the run.
ACCEPTANCE_LINES = []


@pytest.fixture(autouse=True)
def fresh_tape():
    ad.clear_tape()
    yield
    ad.clear_tape()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
