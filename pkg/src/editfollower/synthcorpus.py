"""Deterministic synthetic car-following corpus.

Leaders follow a constant, sine or piecewise-ramp speed profile; followers
are IDM drivers whose parameters are drawn per event from a single
"aggressiveness" latent, so short headways come with brisk acceleration and
firm braking. Events are simulated with the same IDM step used by the
LSTM_IDM model and labelled with all three discourtesy metrics.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import kernels
from .courtesy import CourtesyKind, discourtesy
from .errors import ConfigError, DataError
from .models.idm import BOUNDS, IDMParams, equilibrium_spacing
from .trajectory import DEFAULT_DT, DEFAULT_MIN_DURATION, TrajectoryEvent

PROFILES = ("constant", "sine", "ramps")
_MAX_REDRAWS = 50


@dataclass(frozen=True)
class ScenarioSpec:
    """Generator settings.

    The ``*_jitter`` fields are half-widths of uniform per-event
    perturbations; with all jitters at zero and ``follower`` set, every event
    is identical. ``follower=None`` draws follower parameters per event.
    """

    profile: str = "sine"
    base_speed: float = 25.0
    amplitude: float = 5.0
    period: float = 30.0
    duration: float = 20.0
    follower: IDMParams | None = None
    initial_spacing: float | None = None
    noise_std: float = 0.0
    seed: int = 0
    dt: float = DEFAULT_DT
    base_speed_jitter: float = 0.0
    amplitude_jitter: float = 0.0
    period_jitter: float = 0.0
    duration_jitter: float = 0.0

    def __post_init__(self) -> None:
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile '{self.profile}' (expected one of {', '.join(PROFILES)})")
        if self.duration - self.duration_jitter <= DEFAULT_MIN_DURATION:
            raise ConfigError(f"duration must exceed {DEFAULT_MIN_DURATION} s for every event")
        max_amp = self.amplitude + self.amplitude_jitter
        if self.profile != "constant" and max_amp >= self.base_speed - self.base_speed_jitter:
            raise ConfigError("amplitude must stay below the base speed (leader speeds would go negative)")
        if self.period - self.period_jitter <= 0:
            raise ConfigError("period must be positive")
        if self.noise_std < 0 or self.dt <= 0:
            raise ConfigError("noise_std must be >= 0 and dt > 0")

    @classmethod
    def from_mapping(cls, data: Mapping) -> "ScenarioSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
        data = dict(data)
        if isinstance(data.get("follower"), Mapping):
            data["follower"] = IDMParams(**data["follower"])
        return cls(**data)

    def to_mapping(self) -> dict:
        d = asdict(self)
        if d["follower"] is None:
            del d["follower"]
        if d["initial_spacing"] is None:
            del d["initial_spacing"]
        return d


# Settings used by the acceptance suite: short-period leader oscillation so a
# 5 s prediction window sees a representative slice of each follower's style.
ACCEPTANCE_SPEC = ScenarioSpec(
    profile="sine", base_speed=22.0, amplitude=2.5, period=6.0, duration=20.0,
    base_speed_jitter=4.0, amplitude_jitter=1.0, period_jitter=1.5, duration_jitter=3.0,
    seed=2024,
)


@dataclass
class Corpus:
    events: list[TrajectoryEvent]
    labels: dict[str, dict[str, float]]
    followers: dict[str, IDMParams] = field(default_factory=dict)
    aggressiveness: dict[str, float] = field(default_factory=dict)

    def psi(self, kind: "str | CourtesyKind") -> dict[str, float]:
        k = CourtesyKind.parse(kind).value
        return {eid: lab[k] for eid, lab in self.labels.items()}


def draw_follower(rng: np.random.Generator, max_lv_speed: float) -> tuple[IDMParams, float]:
    """Follower parameters from an aggressiveness latent ``z`` in [0, 1]."""
    z = float(rng.uniform(0.0, 1.0))
    jit = rng.uniform(-1.0, 1.0, size=5)
    t_headway = 2.4 - 1.8 * z + 0.1 * jit[0]
    a_max = 0.7 + 2.0 * z + 0.1 * jit[1]
    b_comfort = 1.0 + 2.0 * z + 0.1 * jit[2]
    v_desired = max_lv_speed + 4.0 + 4.0 * z + 0.5 * jit[3]
    s_jam = 2.0 + 0.5 * jit[4]
    values = np.clip([v_desired, t_headway, a_max, b_comfort, 4.0, s_jam], BOUNDS[:, 0], BOUNDS[:, 1])
    return IDMParams.from_array(values), z


def leader_profile(spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    def jitter(width: float) -> float:
        return float(rng.uniform(-width, width)) if width > 0 else 0.0

    base = spec.base_speed + jitter(spec.base_speed_jitter)
    amp = spec.amplitude + jitter(spec.amplitude_jitter)
    period = spec.period + jitter(spec.period_jitter)
    duration = spec.duration + jitter(spec.duration_jitter)
    n = int(round(duration / spec.dt)) + 1
    t = spec.dt * np.arange(n)
    if spec.profile == "constant":
        v = np.full(n, base)
    elif spec.profile == "sine":
        phase = float(rng.uniform(0.0, 2.0 * np.pi)) if spec.period_jitter > 0 else 0.0
        v = base + amp * np.sin(2.0 * np.pi * t / period + phase)
    else:
        n_knots = int(np.ceil(duration / period)) + 1
        knots_t = period * np.arange(n_knots)
        knots_v = base + amp * rng.uniform(-1.0, 1.0, size=n_knots)
        v = np.interp(t, knots_t, knots_v)
    if spec.noise_std > 0:
        v = v + rng.normal(0.0, spec.noise_std, size=n)
    return np.maximum(v, 0.0)


def generate_event(spec: ScenarioSpec, index: int) -> tuple[TrajectoryEvent, IDMParams, float]:
    rng = np.random.default_rng([spec.seed, index])
    for _ in range(_MAX_REDRAWS):
        v_lv = leader_profile(spec, rng)
        if spec.follower is not None:
            follower, z = spec.follower, float("nan")
        else:
            follower, z = draw_follower(rng, float(v_lv.max()))
        v0 = float(v_lv[0])
        s0 = spec.initial_spacing if spec.initial_spacing is not None else equilibrium_spacing(v0, follower)
        v_fv, spacing, min_raw = kernels.idm_simulate(v_lv, v0, s0, follower.as_array(), spec.dt)
        if min_raw > 0:
            t = spec.dt * np.arange(len(v_lv))
            ev = TrajectoryEvent(f"ev{index:05d}", f"lv{index:05d}", t, v_lv, v_fv, spacing, spec.dt)
            return ev, follower, z
    raise DataError(f"event {index}: follower collided in {_MAX_REDRAWS} parameter draws")


def generate(spec: ScenarioSpec, n_events: int) -> Corpus:
    """Generate ``n_events`` labelled events; identical for identical ``spec``."""
    if n_events < 1:
        raise ConfigError(f"n_events must be >= 1, got {n_events}")
    corpus = Corpus([], {})
    for i in range(n_events):
        ev, follower, z = generate_event(spec, i)
        corpus.events.append(ev)
        corpus.labels[ev.event_id] = {k.value: discourtesy(ev.v_fv, ev.dt, k).value for k in CourtesyKind}
        corpus.followers[ev.event_id] = follower
        corpus.aggressiveness[ev.event_id] = z
    return corpus


def write_labels(path: str | Path, labels: Mapping[str, Mapping[str, float]]) -> None:
    """Labels sidecar: ``event_id,kind,psi`` rows."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("event_id", "kind", "psi"))
        for eid, per_kind in labels.items():
            for kind, value in per_kind.items():
                w.writerow((eid, kind, repr(float(value))))


def read_labels(path: str | Path, kind: "str | CourtesyKind | None" = None) -> dict[str, float] | dict[str, dict[str, float]]:
    """Read a labels file; with ``kind`` returns ``event_id -> psi`` for that kind."""
    out: dict[str, dict[str, float]] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["event_id"], {})[CourtesyKind.parse(row["kind"]).value] = float(row["psi"])
    if kind is None:
        return out
    k = CourtesyKind.parse(kind).value
    return {eid: d[k] for eid, d in out.items() if k in d}


def with_seed(spec: ScenarioSpec, seed: int) -> ScenarioSpec:
    return replace(spec, seed=seed)
