"""Shared model plumbing: configuration, feature standardisation, input batches,
parameter initialisation and checkpoints."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..errors import ConfigError, DataError
from ..trajectory import TrajectoryEvent

CHECKPOINT_FORMAT = "editfollower-checkpoint"
CHECKPOINT_VERSION = 1

FEATURES = ("spacing", "v_lv", "v_fv", "delta_v", "psi")


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "lstm_idm"
    conditioned: bool = True
    hidden: int = 64
    history: int = 50
    horizon: int = 50
    dt: float = 0.1
    d_model: int = 32
    heads: int = 4
    layers: int = 1
    courtesy_kind: str = "speed"

    @property
    def n_features(self) -> int:
        return 5 if self.conditioned else 4

    @property
    def name(self) -> str:
        base = {"idm": "IDM", "lstm": "LSTM", "lstm_idm": "LSTM_IDM", "transformer": "Transformer"}.get(self.arch, self.arch)
        return f"Edit_{base}" if self.conditioned else base


@dataclass
class Standardizer:
    """Per-feature mean/std for (spacing, v_lv, v_fv, delta_v, psi)."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(5))
    std: np.ndarray = field(default_factory=lambda: np.ones(5))

    @classmethod
    def fit(cls, events: Sequence[TrajectoryEvent], psi: Sequence[float]) -> "Standardizer":
        if not events:
            raise DataError("cannot fit standardisation statistics on an empty split")
        cols = [np.concatenate([getattr(e, k) for e in events]) for k in ("spacing", "v_lv", "v_fv")]
        cols.append(np.concatenate([e.delta_v for e in events]))
        cols.append(np.asarray(psi, dtype=np.float64))
        mean = np.array([c.mean() for c in cols])
        std = np.array([c.std() for c in cols])
        std = np.where(std > 1e-8, std, 1.0)
        return cls(mean, std)

    def to_dict(self) -> dict:
        return {"features": list(FEATURES), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


@dataclass
class ModelInput:
    """A batch of windows.

    ``history`` is standardised ``[B, H, F]``; every other array is in SI
    units. ``lv`` holds leader speeds from the current step through the end
    of the horizon (``[B, P + 1]``), so ``lv[:, 1:]`` is the future leader
    profile.
    """

    history: np.ndarray
    lv: np.ndarray
    psi: np.ndarray
    v_fv0: np.ndarray
    spacing0: np.ndarray
    psi_std: np.ndarray

    @property
    def future_lv(self) -> np.ndarray:
        return self.lv[:, 1:]

    def __len__(self) -> int:
        return self.history.shape[0]


def build_input(
    events: Sequence[TrajectoryEvent],
    starts: Sequence[int],
    psi: Sequence[float],
    stats: Standardizer,
    config: ModelConfig,
) -> ModelInput:
    """Assemble windows ``[start, start + H)`` of history plus ``P`` future steps."""
    H, P = config.history, config.horizon
    B = len(events)
    hist = np.empty((B, H, 5))
    lv = np.empty((B, P + 1))
    psi = np.asarray(psi, dtype=np.float64)
    for b, (ev, s0) in enumerate(zip(events, starts)):
        if s0 < 0 or s0 + H + P > len(ev):
            raise DataError(f"window start {s0} (H={H}, P={P}) out of range for event {ev.event_id} of length {len(ev)}")
        sl = slice(s0, s0 + H)
        hist[b, :, 0] = ev.spacing[sl]
        hist[b, :, 1] = ev.v_lv[sl]
        hist[b, :, 2] = ev.v_fv[sl]
        hist[b, :, 3] = ev.v_lv[sl] - ev.v_fv[sl]
        hist[b, :, 4] = psi[b]
        lv[b] = ev.v_lv[s0 + H - 1 : s0 + H + P]
    v0 = hist[:, -1, 2].copy()
    sp0 = hist[:, -1, 0].copy()
    hist = (hist - stats.mean) / stats.std
    if not config.conditioned:
        hist = hist[:, :, :4]
    psi_std = (psi - stats.mean[4]) / stats.std[4]
    return ModelInput(np.ascontiguousarray(hist), lv, psi, v0, sp0, psi_std)


def uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class ModelOutput:
    speeds: ad.Tensor                     # [B, P] m/s
    idm_params: ad.Tensor | None = None   # [B, 6] for lstm_idm
    spacings: ad.Tensor | None = None     # [B, P] when the model simulates spacing itself
    collided: np.ndarray | None = None


class Model:
    """Base class; subclasses define ``param_shapes`` and ``forward``."""

    arch = ""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray], stats: Standardizer):
        self.config = config
        self.stats = stats
        self.params = {k: ad.parameter(v, name=k) for k, v in params.items()}

    # -- construction -----------------------------------------------------
    @classmethod
    def param_shapes(cls, config: ModelConfig) -> dict[str, tuple[tuple[int, ...], int]]:
        """``name -> (shape, fan_in)``."""
        raise NotImplementedError

    @classmethod
    def initial_params(cls, config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        return {name: uniform(rng, fan_in, shape) for name, (shape, fan_in) in cls.param_shapes(config).items()}

    # -- forward ----------------------------------------------------------
    def forward(self, batch: ModelInput) -> ModelOutput:
        raise NotImplementedError

    def destandardize_speed(self, x: ad.Tensor) -> ad.Tensor:
        """Map standardised FV speed to m/s and clamp at zero."""
        return ad.relu(x * self.stats.std[2] + self.stats.mean[2])

    # -- parameters -------------------------------------------------------
    def parameters(self) -> list[ad.Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float64)

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: Model, path: str | Path, extra: dict | None = None) -> None:
    """JSON container; see README "Checkpoint format"."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": model.config.arch,
        "config": asdict(model.config),
        "standardization": model.stats.to_dict(),
        "parameters": {
            k: {"shape": list(v.shape), "data": v.data.reshape(-1).tolist()}
            for k, v in sorted(model.params.items())
        },
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path: str | Path) -> Model:
    from . import build_model

    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not an editfollower checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    config = ModelConfig(**doc["config"])
    params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["parameters"].items()}
    model = build_model(config, params=params, stats=Standardizer.from_dict(doc["standardization"]))
    model.checkpoint_extra = doc.get("extra", {})
    return model


def with_conditioning(config: ModelConfig, conditioned: bool) -> ModelConfig:
    return replace(config, conditioned=conditioned)
