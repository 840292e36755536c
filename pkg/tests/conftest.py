import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=400, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_criteria: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    cid, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        if status == "SKIP" and isinstance(rep.longrepr, tuple):
            text = f"{text} [{rep.longrepr[2]}]"
        _criteria[cid] = (status, text)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_criteria, key=lambda c: (int("".join(filter(str.isdigit, c))), c)):
        status, text = _criteria[cid]
        terminalreporter.write_line(f"{status} criterion {cid}: {text}")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
