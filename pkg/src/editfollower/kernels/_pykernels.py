"""Pure numpy implementations of the hot kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors them loop by
loop. Both take and return C-contiguous float64 arrays.

IDM parameter columns are ``(v_desired, t_headway, a_max, b_comfort, beta,
s_jam)``.
"""
from __future__ import annotations

import math

import numpy as np

ACC_MIN = -8.0
ACC_MAX = 5.0
SPACING_FLOOR = 0.1

# Columns of the IDM step cache.
_C_DV, _C_DS = 0, 1          # d acc_raw / d v, d acc_raw / d s
_C_DP = 2                    # 6 columns: d acc_raw / d params
_C_MC, _C_MV, _C_MS = 8, 9, 10
IDM_CACHE_WIDTH = 11


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_cell_forward(z: np.ndarray, c_prev: np.ndarray):
    """Gate order is (input, forget, cell, output)."""
    n = c_prev.shape[1]
    gates = np.empty_like(z)
    gates[:, :2 * n] = _sigmoid(z[:, :2 * n])
    gates[:, 2 * n:3 * n] = np.tanh(z[:, 2 * n:3 * n])
    gates[:, 3 * n:] = _sigmoid(z[:, 3 * n:])
    i, f, g, o = gates[:, :n], gates[:, n:2 * n], gates[:, 2 * n:3 * n], gates[:, 3 * n:]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, gates, tanh_c


def lstm_cell_backward(dh, dc, gates, c_prev, tanh_c):
    n = c_prev.shape[1]
    i, f, g, o = gates[:, :n], gates[:, n:2 * n], gates[:, 2 * n:3 * n], gates[:, 3 * n:]
    dc_total = dc + dh * o * (1.0 - tanh_c * tanh_c)
    dz = np.empty_like(gates)
    dz[:, :n] = dc_total * g * i * (1.0 - i)
    dz[:, n:2 * n] = dc_total * c_prev * f * (1.0 - f)
    dz[:, 2 * n:3 * n] = dc_total * i * (1.0 - g * g)
    dz[:, 3 * n:] = dh * tanh_c * o * (1.0 - o)
    return dz, dc_total * f


def idm_accel_raw(v, s, v_lv, params):
    """Unclipped IDM acceleration and its partial derivatives.

    Returns ``(acc, d_v, d_s, d_params)`` with ``d_params`` shaped like
    ``params``.
    """
    vd, th, a0, b, lam, s0 = (params[:, k] for k in range(6))
    dvc = v - v_lv
    sqrt_ab = np.sqrt(a0 * b)
    dyn = v * th + v * dvc / (2.0 * sqrt_ab)
    md = dyn > 0
    s_star = s0 + np.where(md, dyn, 0.0)
    q = s_star / s
    r = v / vd
    r_lm1 = np.power(r, lam - 1.0)
    rl = r_lm1 * r
    acc = a0 * (1.0 - rl - q * q)

    k_star = -2.0 * a0 * q / s          # d acc / d s_star
    d_v = -a0 * lam * r_lm1 / vd + k_star * md * (th + (dvc + v) / (2.0 * sqrt_ab))
    d_s = 2.0 * a0 * q * q / s
    d_p = np.empty_like(params)
    d_p[:, 0] = a0 * lam * rl / vd
    d_p[:, 1] = k_star * md * v
    d_p[:, 2] = (1.0 - rl - q * q) + k_star * md * (-v * dvc / (4.0 * a0 * sqrt_ab))
    d_p[:, 3] = k_star * md * (-v * dvc / (4.0 * b * sqrt_ab))
    with np.errstate(divide="ignore", invalid="ignore"):
        d_p[:, 4] = np.where(r > 0, -a0 * rl * np.log(np.where(r > 0, r, 1.0)), 0.0)
    d_p[:, 5] = k_star
    return acc, d_v, d_s, d_p


def idm_step_forward(v, s, v_lv0, v_lv1, params, dt, need_grad=True):
    """One closed-loop IDM step for a batch of followers.

    Acceleration is clipped to ``[ACC_MIN, ACC_MAX]``, speed to ``>= 0`` and
    spacing to ``>= SPACING_FLOOR``; spacing advances by the trapezoidal
    update. Returns ``(v_next, s_next, s_raw, cache)``.
    """
    acc_raw, d_v, d_s, d_p = idm_accel_raw(v, s, v_lv0, params)
    acc = np.clip(acc_raw, ACC_MIN, ACC_MAX)
    v1_raw = v + acc * dt
    v1 = np.maximum(v1_raw, 0.0)
    s_raw = s + 0.5 * dt * ((v_lv0 - v) + (v_lv1 - v1))
    s1 = np.maximum(s_raw, SPACING_FLOOR)
    if not need_grad:
        return v1, s1, s_raw, None
    cache = np.empty((len(v), IDM_CACHE_WIDTH))
    cache[:, _C_DV] = d_v
    cache[:, _C_DS] = d_s
    cache[:, _C_DP:_C_DP + 6] = d_p
    cache[:, _C_MC] = (acc_raw >= ACC_MIN) & (acc_raw <= ACC_MAX)
    cache[:, _C_MV] = v1_raw > 0
    cache[:, _C_MS] = s_raw >= SPACING_FLOOR
    return v1, s1, s_raw, cache


def idm_step_backward(g_v1, g_s1, cache, dt):
    g_sraw = g_s1 * cache[:, _C_MS]
    g_v1raw = (g_v1 - 0.5 * dt * g_sraw) * cache[:, _C_MV]
    g_acc = g_v1raw * dt * cache[:, _C_MC]
    g_v = g_v1raw + g_acc * cache[:, _C_DV] - 0.5 * dt * g_sraw
    g_s = g_sraw + g_acc * cache[:, _C_DS]
    g_p = g_acc[:, None] * cache[:, _C_DP:_C_DP + 6]
    return g_v, g_s, g_p


def idm_simulate(v_lv, v_init, s_init, params, dt):
    """Sequential IDM follower against a recorded leader speed series.

    ``params`` is a length-6 vector. Returns ``(v_fv, spacing, min_raw_spacing)``
    with ``v_fv[0] = v_init`` and ``spacing[0] = s_init``.
    """
    vd, th, a0, b, lam, s0 = (float(x) for x in params)
    two_sqrt_ab = 2.0 * math.sqrt(a0 * b)
    n = len(v_lv)
    lv = [float(x) for x in v_lv]
    v_fv = np.empty(n)
    sp = np.empty(n)
    v, s = float(v_init), float(s_init)
    v_fv[0], sp[0] = v, s
    min_raw = s
    for k in range(n - 1):
        dyn = v * th + v * (v - lv[k]) / two_sqrt_ab
        s_star = s0 + (dyn if dyn > 0 else 0.0)
        q = s_star / s
        acc = a0 * (1.0 - (v / vd) ** lam - q * q)
        acc = min(max(acc, ACC_MIN), ACC_MAX)
        v1 = v + acc * dt
        if v1 < 0:
            v1 = 0.0
        s_raw = s + 0.5 * dt * ((lv[k] - v) + (lv[k + 1] - v1))
        if s_raw < min_raw:
            min_raw = s_raw
        v, s = v1, (s_raw if s_raw > SPACING_FLOOR else SPACING_FLOOR)
        v_fv[k + 1], sp[k + 1] = v, s
    return v_fv, sp, min_raw
