# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``; same signatures."""
import numpy as np

from libc.math cimport exp, tanh, sqrt, pow, log

cdef double ACC_MIN = -8.0
cdef double ACC_MAX = 5.0
cdef double SPACING_FLOOR = 0.1
DEF CACHE_W = 11


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def lstm_cell_forward(const double[:, ::1] z, const double[:, ::1] c_prev):
    cdef Py_ssize_t B = c_prev.shape[0], n = c_prev.shape[1]
    cdef Py_ssize_t r, j
    h_arr = np.empty((B, n))
    c_arr = np.empty((B, n))
    g_arr = np.empty((B, 4 * n))
    t_arr = np.empty((B, n))
    cdef double[:, ::1] h = h_arr, c = c_arr, gates = g_arr, tc = t_arr
    cdef double i, f, g, o, cc
    with nogil:
        for r in range(B):
            for j in range(n):
                i = _sigmoid(z[r, j])
                f = _sigmoid(z[r, n + j])
                g = tanh(z[r, 2 * n + j])
                o = _sigmoid(z[r, 3 * n + j])
                gates[r, j] = i
                gates[r, n + j] = f
                gates[r, 2 * n + j] = g
                gates[r, 3 * n + j] = o
                cc = f * c_prev[r, j] + i * g
                c[r, j] = cc
                tc[r, j] = tanh(cc)
                h[r, j] = o * tc[r, j]
    return h_arr, c_arr, g_arr, t_arr


def lstm_cell_backward(const double[:, ::1] dh, const double[:, ::1] dc,
                       const double[:, ::1] gates, const double[:, ::1] c_prev,
                       const double[:, ::1] tanh_c):
    cdef Py_ssize_t B = c_prev.shape[0], n = c_prev.shape[1]
    cdef Py_ssize_t r, j
    dz_arr = np.empty((B, 4 * n))
    dcp_arr = np.empty((B, n))
    cdef double[:, ::1] dz = dz_arr, dcp = dcp_arr
    cdef double i, f, g, o, t, dct
    with nogil:
        for r in range(B):
            for j in range(n):
                i = gates[r, j]
                f = gates[r, n + j]
                g = gates[r, 2 * n + j]
                o = gates[r, 3 * n + j]
                t = tanh_c[r, j]
                dct = dc[r, j] + dh[r, j] * o * (1.0 - t * t)
                dz[r, j] = dct * g * i * (1.0 - i)
                dz[r, n + j] = dct * c_prev[r, j] * f * (1.0 - f)
                dz[r, 2 * n + j] = dct * i * (1.0 - g * g)
                dz[r, 3 * n + j] = dh[r, j] * t * o * (1.0 - o)
                dcp[r, j] = dct * f
    return dz_arr, dcp_arr


def idm_step_forward(const double[::1] v, const double[::1] s, const double[::1] v_lv0,
                     const double[::1] v_lv1, const double[:, ::1] params, double dt,
                     bint need_grad=True):
    cdef Py_ssize_t B = v.shape[0], k
    v1_arr = np.empty(B)
    s1_arr = np.empty(B)
    sr_arr = np.empty(B)
    cache_arr = np.empty((B, CACHE_W)) if need_grad else np.empty((0, CACHE_W))
    cdef double[::1] v1o = v1_arr, s1o = s1_arr, sro = sr_arr
    cdef double[:, ::1] cache = cache_arr
    cdef double vd, th, a0, b, lam, s0, vv, ss, dvc, sab, dyn, md, sstar, q, r, rlm1, rl
    cdef double acc_raw, acc, v1r, v1, sraw, kst
    with nogil:
        for k in range(B):
            vd = params[k, 0]; th = params[k, 1]; a0 = params[k, 2]
            b = params[k, 3]; lam = params[k, 4]; s0 = params[k, 5]
            vv = v[k]; ss = s[k]
            dvc = vv - v_lv0[k]
            sab = sqrt(a0 * b)
            dyn = vv * th + vv * dvc / (2.0 * sab)
            md = 1.0 if dyn > 0 else 0.0
            sstar = s0 + md * dyn
            q = sstar / ss
            r = vv / vd
            rlm1 = pow(r, lam - 1.0)
            rl = rlm1 * r
            acc_raw = a0 * (1.0 - rl - q * q)
            acc = acc_raw
            if acc < ACC_MIN:
                acc = ACC_MIN
            elif acc > ACC_MAX:
                acc = ACC_MAX
            v1r = vv + acc * dt
            v1 = v1r if v1r > 0 else 0.0
            sraw = ss + 0.5 * dt * ((v_lv0[k] - vv) + (v_lv1[k] - v1))
            v1o[k] = v1
            sro[k] = sraw
            s1o[k] = sraw if sraw > SPACING_FLOOR else SPACING_FLOOR
            if need_grad:
                kst = -2.0 * a0 * q / ss
                cache[k, 0] = -a0 * lam * rlm1 / vd + kst * md * (th + (dvc + vv) / (2.0 * sab))
                cache[k, 1] = 2.0 * a0 * q * q / ss
                cache[k, 2] = a0 * lam * rl / vd
                cache[k, 3] = kst * md * vv
                cache[k, 4] = (1.0 - rl - q * q) + kst * md * (-vv * dvc / (4.0 * a0 * sab))
                cache[k, 5] = kst * md * (-vv * dvc / (4.0 * b * sab))
                cache[k, 6] = -a0 * rl * log(r) if r > 0 else 0.0
                cache[k, 7] = kst
                cache[k, 8] = 1.0 if (acc_raw >= ACC_MIN and acc_raw <= ACC_MAX) else 0.0
                cache[k, 9] = 1.0 if v1r > 0 else 0.0
                cache[k, 10] = 1.0 if sraw >= SPACING_FLOOR else 0.0
    return v1_arr, s1_arr, sr_arr, (cache_arr if need_grad else None)


def idm_step_backward(const double[::1] g_v1, const double[::1] g_s1,
                      const double[:, ::1] cache, double dt):
    cdef Py_ssize_t B = g_v1.shape[0], k, j
    gv_arr = np.empty(B)
    gs_arr = np.empty(B)
    gp_arr = np.empty((B, 6))
    cdef double[::1] gv = gv_arr, gs = gs_arr
    cdef double[:, ::1] gp = gp_arr
    cdef double gsr, gv1r, gacc
    with nogil:
        for k in range(B):
            gsr = g_s1[k] * cache[k, 10]
            gv1r = (g_v1[k] - 0.5 * dt * gsr) * cache[k, 9]
            gacc = gv1r * dt * cache[k, 8]
            gv[k] = gv1r + gacc * cache[k, 0] - 0.5 * dt * gsr
            gs[k] = gsr + gacc * cache[k, 1]
            for j in range(6):
                gp[k, j] = gacc * cache[k, 2 + j]
    return gv_arr, gs_arr, gp_arr


def idm_simulate(v_lv_in, double v_init, double s_init, params_in, double dt):
    cdef const double[::1] v_lv = np.ascontiguousarray(v_lv_in, dtype=np.float64)
    cdef const double[::1] p = np.ascontiguousarray(params_in, dtype=np.float64).reshape(6)
    cdef Py_ssize_t n = v_lv.shape[0], k
    vf_arr = np.empty(n)
    sp_arr = np.empty(n)
    cdef double[::1] vf = vf_arr, sp = sp_arr
    cdef double vd = p[0], th = p[1], a0 = p[2], b = p[3], lam = p[4], s0 = p[5]
    cdef double two_sab = 2.0 * sqrt(a0 * b)
    cdef double v = v_init, s = s_init, min_raw = s_init
    cdef double dyn, q, acc, v1, sraw
    vf[0] = v
    sp[0] = s
    with nogil:
        for k in range(n - 1):
            dyn = v * th + v * (v - v_lv[k]) / two_sab
            q = (s0 + (dyn if dyn > 0 else 0.0)) / s
            acc = a0 * (1.0 - pow(v / vd, lam) - q * q)
            if acc < ACC_MIN:
                acc = ACC_MIN
            elif acc > ACC_MAX:
                acc = ACC_MAX
            v1 = v + acc * dt
            if v1 < 0:
                v1 = 0.0
            sraw = s + 0.5 * dt * ((v_lv[k] - v) + (v_lv[k + 1] - v1))
            if sraw < min_raw:
                min_raw = sraw
            v = v1
            s = sraw if sraw > SPACING_FLOOR else SPACING_FLOOR
            vf[k + 1] = v
            sp[k + 1] = s
    return vf_arr, sp_arr, min_raw
