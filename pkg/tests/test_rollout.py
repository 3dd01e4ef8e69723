from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from editfollower import autodiff as ad
from editfollower.errors import DataError
from editfollower.models import ModelConfig, ModelOutput, Standardizer, build_model
from editfollower.models.base import Model
from editfollower.rollout import (
    rollout, simulate, spacing_from_speeds, time_gap, update_spacing, window_starts,
)
from editfollower.models import build_input

from conftest import make_event


def test_update_spacing_examples():
    assert update_spacing(10.0, 1.0, 1.0, 0.1) == 10.1
    assert update_spacing(7.3, 0.0, 0.0, 0.1) == 7.3
    assert update_spacing(20.0, -2.0, -4.0, 0.1) == pytest.approx(19.7, abs=1e-12)
    with pytest.raises(ValueError):
        update_spacing(1.0, 0.0, 0.0, 0.0)


def test_trapezoid_exact_for_affine_profiles(rng):
    for _ in range(100):
        a, b = rng.uniform(-5, 5, 2)
        dt = float(rng.choice([0.04, 0.1, 0.2]))
        t0 = float(rng.uniform(0, 30))
        s0 = float(rng.uniform(5, 50))
        s1 = update_spacing(s0, a + b * t0, a + b * (t0 + dt), dt)
        exact = s0 + a * dt + 0.5 * b * ((t0 + dt) ** 2 - t0 ** 2)
        assert abs(s1 - exact) < 1e-12


def test_trapezoid_multistep_matches_analytic(rng):
    # Over many steps only floating-point round-off remains.
    for _ in range(20):
        a, b = rng.uniform(-5, 5, 2)
        n = int(rng.integers(2, 200))
        t = 0.1 * np.arange(n)
        dv = a + b * t
        s = s0 = float(rng.uniform(5, 50))
        for k in range(n - 1):
            s = update_spacing(s, dv[k], dv[k + 1], 0.1)
        T = t[-1]
        assert abs(s - (s0 + a * T + 0.5 * b * T * T)) < 1e-12 * n * max(1.0, abs(s))


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=40), st.floats(0.01, 0.5))
def test_negating_dv_negates_increments(dv, dt):
    dv = np.array(dv)
    for k in range(len(dv) - 1):
        up = update_spacing(0.0, dv[k], dv[k + 1], dt)
        down = update_spacing(0.0, -dv[k], -dv[k + 1], dt)
        assert up == -down


def test_time_gap_floor():
    np.testing.assert_allclose(time_gap([10.0, 10.0], [20.0, 0.0]), [0.5, 100.0])


def test_oracle_speeds_reproduce_recorded_spacing(small_corpus):
    H, P = 50, 50
    for ev in small_corpus.events[:20]:
        for s0 in window_starts(len(ev), H, P, 25):
            i = s0 + H - 1
            lv = ev.v_lv[i : i + P + 1][None]
            speeds = ad.tensor(ev.v_fv[i + 1 : i + P + 1][None])
            sp, collided = spacing_from_speeds(speeds, lv, ev.v_fv[i : i + 1], ev.spacing[i : i + 1], ev.dt)
            assert np.max(np.abs(sp.data[0] - ev.spacing[i + 1 : i + P + 1])) <= 0.05
            assert not collided[0]


def test_matching_leader_keeps_spacing_constant():
    lv = (20 + np.sin(np.arange(31) * 0.3))[None]
    sp, collided = spacing_from_speeds(ad.tensor(lv[:, 1:]), lv, lv[:, 0], np.array([15.0]), 0.1)
    np.testing.assert_allclose(sp.data, 15.0, atol=1e-9)
    assert not collided[0]


def test_faster_follower_collides_and_floors():
    lv = np.full((1, 201), 10.0)
    speeds = ad.tensor(np.full((1, 200), 15.0))
    sp, collided = spacing_from_speeds(speeds, lv, np.array([15.0]), np.array([5.0]), 0.1)
    assert collided[0]
    assert sp.data.min() == pytest.approx(0.1)
    assert np.all(sp.data >= 0.1)


class OracleModel(Model):
    """Replays the recorded follower speeds of the window it is given."""

    arch = "oracle"

    def __init__(self, config, future_fv):
        super().__init__(config, {}, Standardizer())
        self.future_fv = future_fv

    def forward(self, batch):
        return ModelOutput(speeds=ad.tensor(self.future_fv))


def test_rollout_with_oracle(small_corpus):
    ev = small_corpus.events[0]
    cfg = ModelConfig(arch="lstm", history=50, horizon=50)
    model = OracleModel(cfg, ev.v_fv[None, 50:100])
    res = rollout(model, ev, 0.02, (0, 50, 50))
    np.testing.assert_array_equal(res.v_fv_pred, ev.v_fv[50:100])
    assert np.max(np.abs(res.spacing_pred - ev.spacing[50:100])) <= 0.05
    np.testing.assert_allclose(res.delta_v, ev.v_lv[50:100] - ev.v_fv[50:100])
    np.testing.assert_allclose(res.time_gap, res.spacing_pred / np.maximum(res.v_fv_pred, 0.1))
    assert res.collision_flag is False
    assert len(res.v_fv_pred) == len(res.spacing_pred) == len(res.delta_v) == len(res.time_gap) == 50


def test_rollout_errors(small_corpus):
    ev = small_corpus.events[0]
    model = build_model(ModelConfig(arch="lstm_idm", hidden=4, history=50, horizon=50))
    with pytest.raises(DataError, match="out of range"):
        rollout(model, ev, 0.02, (len(ev) - 60, 50, 50))
    with pytest.raises(DataError):
        rollout(model, ev, 0.02, (0, 40, 50))
    ev2 = make_event(ev.v_fv, ev.v_lv, ev.spacing, dt=0.2)
    with pytest.raises(DataError, match="dt"):
        rollout(model, ev2, 0.02, (0, 50, 50))


def test_rollout_bit_deterministic(small_corpus):
    ev = small_corpus.events[3]
    cfg = ModelConfig(arch="lstm_idm", hidden=8, history=50, horizon=50)
    stats = Standardizer.fit(small_corpus.events, list(small_corpus.psi("speed").values()))
    model = build_model(cfg, stats=stats, seed=1)
    a = rollout(model, ev, 0.02, (10, 50, 50))
    b = rollout(model, ev, 0.02, (10, 50, 50))
    assert a.v_fv_pred.tobytes() == b.v_fv_pred.tobytes()
    assert a.spacing_pred.tobytes() == b.spacing_pred.tobytes()


def test_simulate_uses_trapezoid_for_learned_models(small_corpus):
    cfg = ModelConfig(arch="lstm", hidden=8, history=50, horizon=50)
    evs = small_corpus.events[:4]
    stats = Standardizer.fit(evs, [0.02] * 4)
    model = build_model(cfg, stats=stats, seed=0)
    batch = build_input(evs, [0] * 4, [0.02] * 4, stats, cfg)
    res = simulate(model, batch)
    v = res.speeds.data
    dv = batch.lv - np.column_stack([batch.v_fv0, v])
    s = batch.spacing0.copy()
    for k in range(50):
        s = np.maximum(s + (dv[:, k] + dv[:, k + 1]) / 2 * 0.1, 0.1)
        np.testing.assert_allclose(res.spacings.data[:, k], s, atol=1e-9)


def test_window_starts():
    assert window_starts(200, 50, 50, 25) == [0, 25, 50, 75, 100]
    assert window_starts(99, 50, 50, 25) == []
    with pytest.raises(ValueError):
        window_starts(200, 50, 50, 0)
