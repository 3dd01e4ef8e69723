from __future__ import annotations

import numpy as np
import pytest

from editfollower.synthcorpus import ACCEPTANCE_SPEC, generate
from editfollower.trajectory import TrajectoryEvent


def make_event(v_fv, v_lv=None, spacing=None, dt=0.1, event_id="e0", lv_id="lv0"):
    v_fv = np.asarray(v_fv, dtype=float)
    n = len(v_fv)
    v_lv = np.full(n, v_fv.mean()) if v_lv is None else np.asarray(v_lv, dtype=float)
    spacing = np.full(n, 20.0) if spacing is None else np.asarray(spacing, dtype=float)
    return TrajectoryEvent(event_id, lv_id, dt * np.arange(n), v_lv, v_fv, spacing, dt)


@pytest.fixture(scope="session")
def small_corpus():
    return generate(ACCEPTANCE_SPEC, 60)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
