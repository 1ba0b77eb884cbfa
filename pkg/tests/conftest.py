import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from gssp.synthetic import random_scene, synthetic_scene  # noqa: E402

# Filled by tests/test_acceptance.py: criterion number -> (title, passed, detail).
ACCEPTANCE_RESULTS = {}


@pytest.fixture(scope="session")
def small_synthetic():
    return synthetic_scene(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_scene():
    return random_scene(7, n=40)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:2d}. {title}: {detail}")
