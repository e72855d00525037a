import re

import pytest

# criterion label -> (status, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(criterion, passed, detail):
    """Log one acceptance line; ``passed`` None means the check could not run."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    ACCEPTANCE[str(criterion)] = (status, detail)
    print(f"criterion {criterion}: {status}  {detail}")


@pytest.fixture
def report():
    return record


def _order(label):
    return int(re.match(r"\d+", label).group()), label


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE, key=_order):
        status, detail = ACCEPTANCE[label]
        terminalreporter.write_line(f"criterion {label}: {status}  {detail}")
