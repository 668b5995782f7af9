import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_world():
    from yieldboost.synth import WorldConfig, generate_world

    return generate_world(WorldConfig(n_counties=40, years=(2003, 2010), seed=7))


@pytest.fixture(scope="session")
def small_table(small_world):
    from yieldboost.features import build_table

    w = small_world
    return build_table(w.iter_cubes(), w.yield_table(), w.centroids())


ACCEPTANCE_RESULTS: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    """Store one summary line per acceptance criterion, printed at the end of the run."""

    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_RESULTS[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE_RESULTS[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
