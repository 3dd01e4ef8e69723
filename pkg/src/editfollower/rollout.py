"""Closed-loop simulation of the follower against a recorded leader.

Predicted speeds come from a model; spacing then evolves by the trapezoidal
update ``s[k+1] = s[k] + (dv[k] + dv[k+1]) / 2 * dt`` with
``dv = v_lv - v_fv``. Spacings at or below zero raise the collision flag; the
simulation continues with the spacing floored at 0.1 m.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import DataError
from .models.base import Model, ModelInput, build_input
from .trajectory import TrajectoryEvent

SPACING_FLOOR = 0.1
MIN_SPEED_FOR_GAP = 0.1


def update_spacing(s_t: float, dv_t: float, dv_t1: float, dt: float) -> float:
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    return s_t + (dv_t + dv_t1) / 2 * dt


def time_gap(spacing, v_fv):
    return np.asarray(spacing) / np.maximum(np.asarray(v_fv), MIN_SPEED_FOR_GAP)


@dataclass(frozen=True)
class RolloutResult:
    v_fv_pred: np.ndarray
    spacing_pred: np.ndarray
    delta_v: np.ndarray
    collision_flag: bool
    time_gap: np.ndarray


@dataclass
class BatchRollout:
    """Tape-valued predictions for a batch of windows."""

    speeds: ad.Tensor      # [B, P]
    spacings: ad.Tensor    # [B, P]
    collided: np.ndarray   # [B] bool
    idm_params: ad.Tensor | None = None

    def results(self, lv: np.ndarray) -> list[RolloutResult]:
        v = self.speeds.data
        s = self.spacings.data
        dv = lv[:, 1:] - v
        return [
            RolloutResult(v[b].copy(), s[b].copy(), dv[b].copy(), bool(self.collided[b]), time_gap(s[b], v[b]))
            for b in range(len(v))
        ]


def _upper_ones(n: int) -> np.ndarray:
    return np.triu(np.ones((n, n)))


def spacing_from_speeds(speeds: ad.Tensor, lv: np.ndarray, v_fv0: np.ndarray, s0: np.ndarray, dt: float):
    """Integrate spacing for a batch of predicted speed series.

    Args:
        speeds: ``[B, P]`` predicted FV speeds (tape-valued).
        lv: ``[B, P + 1]`` leader speeds from the current step.
        v_fv0, s0: ``[B]`` FV speed and spacing at the current step.

    Returns:
        ``(spacings [B, P], collided [B])``.
    """
    B, P = speeds.shape
    dv = lv[:, 1:] - speeds
    dv0 = ad.Tensor((lv[:, 0] - v_fv0)[:, None])
    dv_prev = ad.concat([dv0, dv[:, :-1]], axis=1) if P > 1 else dv0
    incr = (dv_prev + dv) * (0.5 * dt)
    raw = ad.matmul(incr, _upper_ones(P)) + s0[:, None]
    if np.all(raw.data >= SPACING_FLOOR):
        return raw, np.zeros(B, dtype=bool)
    # Sequential form: the floor feeds back into later steps.
    s = ad.Tensor(s0)
    cols, collided = [], np.zeros(B, dtype=bool)
    for k in range(P):
        s_raw = s + incr[:, k]
        collided |= s_raw.data <= 0
        s = ad.maximum(s_raw, SPACING_FLOOR)
        cols.append(s)
    return ad.stack(cols, axis=1), collided


def simulate(model: Model, batch: ModelInput) -> BatchRollout:
    out = model.forward(batch)
    spacings, collided = spacing_from_speeds(out.speeds, batch.lv, batch.v_fv0, batch.spacing0, model.config.dt)
    if out.collided is not None:
        collided = collided | out.collided
    return BatchRollout(out.speeds, spacings, collided, out.idm_params)


def window_starts(n_points: int, history: int, horizon: int, stride: int) -> list[int]:
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return list(range(0, n_points - history - horizon + 1, stride))


def check_window(event: TrajectoryEvent, start: int, history: int, horizon: int) -> None:
    if start < 0 or start + history + horizon > len(event):
        raise DataError(
            f"window (start={start}, H={history}, P={horizon}) out of range for event "
            f"{event.event_id} of length {len(event)}")


def rollout(model: Model, event: TrajectoryEvent, psi: float, window: Sequence[int]) -> RolloutResult:
    """Closed-loop rollout of one window ``(start, H, P)`` of an event."""
    start, H, P = (int(x) for x in window)
    cfg = model.config
    if (H, P) != (cfg.history, cfg.horizon):
        raise DataError(f"window H={H}, P={P} does not match the model's H={cfg.history}, P={cfg.horizon}")
    if abs(event.dt - cfg.dt) > 1e-12:
        raise DataError(f"event dt {event.dt} differs from model dt {cfg.dt}")
    check_window(event, start, H, P)
    batch = build_input([event], [start], [psi], model.stats, cfg)
    with ad.no_tape():
        res = simulate(model, batch)
    return res.results(batch.lv)[0]
