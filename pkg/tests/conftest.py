import os
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from delaysync.engine import bundled, run

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance criterion number -> (passed, detail)
VERDICTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(VERDICTS):
        ok, detail = VERDICTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


class TimedTrace:
    def __init__(self, name):
        self.scenario = bundled(name)
        t0 = time.perf_counter()
        self.trace = run(self.scenario)
        self.elapsed = time.perf_counter() - t0


_CACHE: dict[str, TimedTrace] = {}


def full_run(name: str) -> TimedTrace:
    """Each bundled 60 s scenario is simulated at most once per session."""
    if name not in _CACHE:
        _CACHE[name] = TimedTrace(name)
    return _CACHE[name]


@pytest.fixture(scope="session")
def leader_run():
    return full_run("paper_leader")


@pytest.fixture(scope="session")
def leaderless_run():
    return full_run("paper_leaderless")


@pytest.fixture(scope="session")
def corollary_run():
    return full_run("paper_corollary")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
