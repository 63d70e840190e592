import datetime as dt
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hybrid_bookrec.corpus import RatingEvent  # noqa: E402

_acceptance = {}


def ev(user, book, author, rating, day=1):
    return RatingEvent(user, book, author, rating, dt.date(2020, 1, 1) + dt.timedelta(days=day))


@pytest.fixture
def small_events():
    """Five users, six books by three authors; dates increase with list position."""
    rows = [
        ("u1", "b1", "a1", 5), ("u1", "b2", "a1", 4), ("u1", "b3", "a2", 2),
        ("u2", "b1", "a1", 4), ("u2", "b2", "a1", 5), ("u2", "b4", "a2", 5),
        ("u3", "b3", "a2", 4), ("u3", "b4", "a2", 4), ("u3", "b5", "a3", 5),
        ("u4", "b5", "a3", 4), ("u4", "b6", "a3", 5), ("u4", "b1", "a1", 3),
        ("u5", "b2", "a1", 4), ("u5", "b6", "a3", 4), ("u5", "b4", "a2", 1),
    ]
    return [ev(*r, day=i) for i, r in enumerate(rows)]


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance[name] = report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(_acceptance.items()):
        label = {"PASSED": "PASS", "FAILED": "FAIL", "SKIPPED": "SKIP"}.get(outcome, outcome)
        terminalreporter.write_line(f"{label:4}  {name}")
