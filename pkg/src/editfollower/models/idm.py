"""Intelligent Driver Model: closed-form acceleration and differentiable rollout."""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np

from .. import autodiff as ad
from .. import kernels
from ..errors import DataError

ACC_MIN = kernels.ACC_MIN
ACC_MAX = kernels.ACC_MAX
SPACING_FLOOR = kernels.SPACING_FLOOR

# (lower, upper) per parameter, in IDMParams field order.
BOUNDS = np.array([
    [1.0, 45.0],   # v_desired (m/s)
    [0.3, 5.0],    # t_headway (s)
    [0.3, 5.0],    # a_max (m/s^2)
    [0.3, 6.0],    # b_comfort (m/s^2)
    [1.0, 10.0],   # beta
    [0.5, 10.0],   # s_jam (m)
])
PARAM_NAMES = ("v_desired", "t_headway", "a_max", "b_comfort", "beta", "s_jam")


@dataclass(frozen=True)
class IDMParams:
    v_desired: float = 30.0
    t_headway: float = 1.5
    a_max: float = 1.5
    b_comfort: float = 2.0
    beta: float = 4.0
    s_jam: float = 2.0

    def __post_init__(self) -> None:
        for name, value, (lo, hi) in zip(PARAM_NAMES, astuple(self), BOUNDS):
            if not lo <= value <= hi:
                raise DataError(f"IDM parameter {name}={value} outside [{lo}, {hi}]")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "IDMParams":
        return cls(*(float(x) for x in values))


# A typical highway follower; untrained LSTM_IDM heads start here.
HEAD_CENTER = IDMParams()


def idm_accel(v_fv, delta_v, spacing, p: IDMParams, clip: bool = True):
    """IDM acceleration in m/s^2.

    ``delta_v`` is the closing speed ``v_fv - v_lv``. The dynamic part of the
    desired gap is floored at zero so a leader pulling away never causes
    braking. Works on floats or numpy arrays.
    """
    spacing = np.asarray(spacing, dtype=np.float64)
    if np.any(spacing <= 0):
        raise DataError("IDM undefined for spacing <= 0 (collision state)")
    v = np.asarray(v_fv, dtype=np.float64)
    dyn = v * p.t_headway + v * np.asarray(delta_v) / (2.0 * math.sqrt(p.a_max * p.b_comfort))
    s_star = p.s_jam + np.maximum(dyn, 0.0)
    acc = p.a_max * (1.0 - (v / p.v_desired) ** p.beta - (s_star / spacing) ** 2)
    if clip:
        acc = np.clip(acc, ACC_MIN, ACC_MAX)
    return float(acc) if acc.ndim == 0 else acc


def equilibrium_spacing(v: float, p: IDMParams) -> float:
    """Spacing at which a follower at constant speed ``v`` (and ``delta_v = 0``) has zero acceleration."""
    ratio = 1.0 - (v / p.v_desired) ** p.beta
    if ratio <= 0:
        raise DataError(f"no equilibrium spacing at v={v} >= v_desired={p.v_desired}")
    return (p.s_jam + v * p.t_headway) / math.sqrt(ratio)


# ---------------------------------------------------------------------------
# Differentiable pieces
# ---------------------------------------------------------------------------


def _logit_of(values) -> np.ndarray:
    lo, hi = BOUNDS[:, 0], BOUNDS[:, 1]
    u = (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)
    return np.log(u / (1.0 - u))


def squash(raw: ad.Tensor, center: np.ndarray | None = None) -> ad.Tensor:
    """Map unbounded ``[B, 6]`` head outputs into the parameter bounds.

    ``raw = 0`` maps to ``center`` (default: :data:`HEAD_CENTER`).
    """
    lo, hi = BOUNDS[:, 0], BOUNDS[:, 1]
    offset = _logit_of(HEAD_CENTER.as_array() if center is None else center)
    return ad.sigmoid(raw + offset) * (hi - lo) + lo


def unsquash(values, center: np.ndarray | None = None) -> np.ndarray:
    """Inverse of :func:`squash`."""
    return _logit_of(values) - _logit_of(HEAD_CENTER.as_array() if center is None else center)


def idm_step(state: ad.Tensor, params: ad.Tensor, v_lv0: np.ndarray, v_lv1: np.ndarray, dt: float):
    """Fused closed-loop step on a ``[B, 2]`` state of (speed, spacing).

    Returns ``(new_state, raw_spacing)``; ``raw_spacing`` is the spacing before
    the floor and is what collision flags are computed from.
    """
    st = np.ascontiguousarray(state.data)
    v = np.ascontiguousarray(st[:, 0])
    s = np.ascontiguousarray(st[:, 1])
    p = np.ascontiguousarray(params.data)
    need = state.requires_grad or params.requires_grad
    v1, s1, s_raw, cache = kernels.idm_step_forward(
        v, s, np.ascontiguousarray(v_lv0, dtype=np.float64),
        np.ascontiguousarray(v_lv1, dtype=np.float64), p, dt, need)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gv, gs, gp = kernels.idm_step_backward(
            np.ascontiguousarray(g[:, 0]), np.ascontiguousarray(g[:, 1]), cache, dt)
        return np.column_stack([gv, gs]), np.asarray(gp)

    out = ad.custom("idm_step", np.column_stack([v1, s1]), (state, params), vjp)
    return out, np.asarray(s_raw)


def idm_step_reference(state: ad.Tensor, params: ad.Tensor, v_lv0, v_lv1, dt: float) -> ad.Tensor:
    """The same step composed from primitive tape ops (slow; used as a test oracle)."""
    v, s = state[:, 0], state[:, 1]
    vd, th, a0, b, lam, s0 = (params[:, k] for k in range(6))
    dvc = v - v_lv0
    dyn = v * th + v * dvc / (2.0 * ad.sqrt(a0 * b))
    s_star = s0 + ad.relu(dyn)
    q = s_star / s
    acc = ad.clip(a0 * (1.0 - ad.pow(v / vd, lam) - q * q), ACC_MIN, ACC_MAX)
    v1 = ad.relu(v + acc * dt)
    s1 = ad.maximum(s + ((v_lv0 - v) + (v_lv1 - v1)) * (0.5 * dt), SPACING_FLOOR)
    return ad.stack([v1, s1], axis=1)


def idm_rollout(
    v_init: np.ndarray,
    s_init: np.ndarray,
    v_lv: np.ndarray,
    params: ad.Tensor,
    dt: float,
):
    """Roll the IDM forward for ``P = v_lv.shape[1] - 1`` steps.

    Args:
        v_init, s_init: ``[B]`` follower speed and spacing at the current step.
        v_lv: ``[B, P + 1]`` leader speeds starting at the current step.
        params: ``[B, 6]`` tape-valued IDM parameters.
        dt: step in seconds.

    Returns:
        ``(speeds [B, P], spacings [B, P], collided [B] bool)``.
    """
    state = ad.Tensor(np.column_stack([v_init, s_init]))
    horizon = v_lv.shape[1] - 1
    states = []
    collided = np.zeros(len(v_init), dtype=bool)
    for k in range(horizon):
        state, s_raw = idm_step(state, params, v_lv[:, k], v_lv[:, k + 1], dt)
        collided |= s_raw <= 0
        states.append(state)
    traj = ad.stack(states, axis=1)  # [B, P, 2]
    return traj[:, :, 0], traj[:, :, 1], collided
