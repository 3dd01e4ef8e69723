"""Discourtesy level metrics.

Each metric is a coefficient of variation of one FV kinematic signal:

* speed:        pop_std(v) / max(|mean(v)|, eps)
* acceleration: pop_std(a) / max(mean(|a|), eps)
* jerk:         pop_std(j) / max(mean(|j|), eps)

with ``a`` and ``j`` forward differences of the speed series. Acceleration
and jerk use the mean of absolute values in the denominator: the signed mean
of an oscillating signal sits near zero and the ratio would blow up.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import DataError, DegenerateInputError
from .trajectory import TrajectoryEvent

EPS = 1e-6


class CourtesyKind(str, enum.Enum):
    SPEED = "speed"
    ACCEL = "accel"
    JERK = "jerk"

    @classmethod
    def parse(cls, value: "str | CourtesyKind") -> "CourtesyKind":
        if isinstance(value, CourtesyKind):
            return value
        aliases = {"acceleration": "accel", "acc": "accel"}
        key = aliases.get(str(value).lower(), str(value).lower())
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown courtesy kind '{value}' (expected speed, accel or jerk)") from None

    @property
    def min_length(self) -> int:
        return {"speed": 2, "accel": 3, "jerk": 4}[self.value]


@dataclass(frozen=True)
class DiscourtesyLabel:
    value: float
    kind: CourtesyKind

    def __post_init__(self) -> None:
        if not np.isfinite(self.value) or self.value < 0:
            raise DataError(f"discourtesy level must be finite and >= 0, got {self.value}")


def _check_length(kind: CourtesyKind, n: int) -> None:
    if n < kind.min_length:
        raise DataError(f"{kind.value} discourtesy needs at least {kind.min_length} samples, got {n}")


def _signal(v: np.ndarray, dt: float, kind: CourtesyKind) -> np.ndarray:
    if kind is CourtesyKind.SPEED:
        return v
    a = np.diff(v, axis=-1) / dt
    if kind is CourtesyKind.ACCEL:
        return a
    return np.diff(a, axis=-1) / dt


def discourtesy_values(speeds: np.ndarray, dt: float, kind: "str | CourtesyKind",
                       strict: bool = True) -> np.ndarray:
    """Row-wise discourtesy of a ``[..., N]`` array of speed series.

    With ``strict=False`` a near-zero mean speed is floored at ``EPS``
    instead of raising (used when scoring model output, which may stop).
    """
    kind = CourtesyKind.parse(kind)
    v = np.asarray(speeds, dtype=np.float64)
    _check_length(kind, v.shape[-1])
    x = _signal(v, dt, kind)
    mu = x.mean(axis=-1, keepdims=True)
    std = np.sqrt(((x - mu) ** 2).mean(axis=-1))
    # the mean of a constant row can be off by an ulp; force an exact zero
    std = np.where(np.all(x == x[..., :1], axis=-1), 0.0, std)
    if kind is CourtesyKind.SPEED:
        scale = np.abs(mu[..., 0])
        if strict and np.any(scale < EPS):
            raise DegenerateInputError("speed discourtesy undefined: mean speed below 1e-6 m/s")
    else:
        scale = np.abs(x).mean(axis=-1)
    return std / np.maximum(scale, EPS)


def discourtesy(speeds: Sequence[float], dt: float, kind: "str | CourtesyKind") -> DiscourtesyLabel:
    kind = CourtesyKind.parse(kind)
    return DiscourtesyLabel(float(discourtesy_values(np.asarray(speeds, dtype=np.float64), dt, kind)), kind)


def discourtesy_speed(fv_speeds: Sequence[float]) -> DiscourtesyLabel:
    return discourtesy(fv_speeds, 1.0, CourtesyKind.SPEED)


def discourtesy_accel(fv_speeds: Sequence[float], dt: float) -> DiscourtesyLabel:
    return discourtesy(fv_speeds, dt, CourtesyKind.ACCEL)


def discourtesy_jerk(fv_speeds: Sequence[float], dt: float) -> DiscourtesyLabel:
    return discourtesy(fv_speeds, dt, CourtesyKind.JERK)


def discourtesy_differentiable(fv_speeds: ad.Tensor, dt: float, kind: "str | CourtesyKind") -> ad.Tensor:
    """Tape-valued discourtesy over the last axis of ``fv_speeds``.

    A ``[N]`` input gives a scalar, a ``[B, N]`` input gives ``[B]``.
    """
    kind = CourtesyKind.parse(kind)
    n = fv_speeds.shape[-1]
    _check_length(kind, n)
    x = fv_speeds
    if kind is not CourtesyKind.SPEED:
        x = (x[..., 1:] - x[..., :-1]) / dt
        if kind is CourtesyKind.JERK:
            x = (x[..., 1:] - x[..., :-1]) / dt
    mu = ad.mean(x, axis=-1, keepdims=True)
    dev = x - mu
    std = ad.sqrt(ad.mean(dev * dev, axis=-1))
    constant = np.all(x.data == x.data[..., :1], axis=-1)
    if np.any(constant):
        std = std * (~constant).astype(np.float64)
    if kind is CourtesyKind.SPEED:
        scale = ad.abs(ad.reshape(mu, mu.shape[:-1]))
        if np.any(scale.data < EPS):
            raise DegenerateInputError("speed discourtesy undefined: mean speed below 1e-6 m/s")
    else:
        scale = ad.mean(ad.abs(x), axis=-1)
    return std / ad.maximum(scale, EPS)


def label_event(event: TrajectoryEvent, kind: "str | CourtesyKind") -> DiscourtesyLabel:
    """Event-level label over the full FV speed series."""
    return discourtesy(event.v_fv, event.dt, kind)
