from __future__ import annotations

import numpy as np
import pytest

from editfollower.courtesy import CourtesyKind
from editfollower.errors import ConfigError
from editfollower.models import IDMParams
from editfollower.synthcorpus import (
    ACCEPTANCE_SPEC, ScenarioSpec, generate, read_labels, write_labels,
)
from editfollower.trajectory import extract_events, load_events, write_events


def test_constant_profile_at_equilibrium():
    spec = ScenarioSpec(profile="constant", base_speed=20.0, follower=IDMParams(), duration=20.0)
    c = generate(spec, 3)
    for ev in c.events:
        np.testing.assert_allclose(ev.v_fv, 20.0, atol=1e-9)
        assert c.labels[ev.event_id]["speed"] == pytest.approx(0.0, abs=1e-9)


def test_aggressive_follower_has_higher_accel_discourtesy():
    # One full leader period; on partial periods the shape-only metric can flip.
    base = dict(profile="sine", base_speed=25.0, amplitude=5.0, period=30.0, duration=30.0)
    aggressive = generate(ScenarioSpec(follower=IDMParams(t_headway=0.5), **base), 1)
    timid = generate(ScenarioSpec(follower=IDMParams(t_headway=2.5), **base), 1)
    assert aggressive.labels["ev00000"]["accel"] > timid.labels["ev00000"]["accel"]


def test_same_seed_same_bytes(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_events(a, generate(ACCEPTANCE_SPEC, 20).events)
    write_events(b, generate(ACCEPTANCE_SPEC, 20).events)
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    write_events(c, generate(ScenarioSpec.from_mapping({**ACCEPTANCE_SPEC.to_mapping(), "seed": 1}), 20).events)
    assert c.read_bytes() != a.read_bytes()


def test_events_pass_extraction_and_never_collide(small_corpus):
    assert extract_events(small_corpus.events) == small_corpus.events
    for ev in small_corpus.events:
        assert ev.spacing.min() > 0


def test_label_variance_positive(small_corpus):
    for kind in CourtesyKind:
        assert np.var(list(small_corpus.psi(kind).values())) > 0


def test_labels_round_trip(tmp_path, small_corpus):
    p = tmp_path / "labels.csv"
    write_labels(p, small_corpus.labels)
    assert read_labels(p) == small_corpus.labels
    assert read_labels(p, "speed") == small_corpus.psi("speed")


def test_csv_round_trip_keeps_labels(tmp_path, small_corpus):
    from editfollower.courtesy import label_event

    p = tmp_path / "c.csv"
    write_events(p, small_corpus.events)
    for ev in load_events(p):
        assert label_event(ev, "speed").value == small_corpus.labels[ev.event_id]["speed"]


@pytest.mark.parametrize("bad", [
    dict(duration=15.0),
    dict(amplitude=30.0, base_speed=25.0),
    dict(profile="zigzag"),
    dict(noise_std=-1.0),
])
def test_invalid_specs(bad):
    with pytest.raises(ConfigError):
        ScenarioSpec(**bad)


def test_n_events_positive():
    with pytest.raises(ConfigError):
        generate(ACCEPTANCE_SPEC, 0)


def test_ramps_and_noise():
    spec = ScenarioSpec(profile="ramps", base_speed=20.0, amplitude=4.0, period=5.0, noise_std=0.2, seed=4)
    c = generate(spec, 5)
    assert len(c.events) == 5
    assert all(np.all(ev.v_lv >= 0) for ev in c.events)


def test_spec_mapping_round_trip():
    spec = ScenarioSpec(follower=IDMParams(t_headway=1.1), initial_spacing=30.0)
    assert ScenarioSpec.from_mapping(spec.to_mapping()) == spec
    with pytest.raises(ConfigError):
        ScenarioSpec.from_mapping({"colour": "red"})
