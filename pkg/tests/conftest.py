import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

_CRITERIA = []


def record_criterion(number, title, passed, detail):
    _CRITERIA.append((number, title, passed, detail))


@pytest.fixture
def criterion():
    """Record one acceptance line; the summary prints them all at the end."""

    def _record(number, title, passed, detail=""):
        record_criterion(number, title, bool(passed), detail)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_CRITERIA, key=lambda c: c[0]):
        mark = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{mark}] criterion {number}: {title} -- {detail}")
