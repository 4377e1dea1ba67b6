"""Compiled RK4 stepping of the three-ion system and its two transfer matrices.

State layout (26 floats): positions ``x_D1, x_H, x_D2``; velocities; ``M_op``
(2x2, row major); ``M_ab`` (4x4, row major).  Each call advances one schedule
phase.  Segments are passed in the flat encoding of
:meth:`ionsep.waveforms.FourierSegment.encode` and friends.
"""

import math

import numpy as np
from numba import njit

N_STATE = 26
N_AUX = 8
N_REC = 34

OK = 0
COLLISION = 1
NOT_CAUGHT = 2


@njit(cache=True)
def _seg_curvature(seg, s, md):
    kind = int(seg[0])
    if kind == 0:
        w = seg[2]
        return md * w * abs(w), 0.0
    dur = seg[1]
    if s < 0.0:
        s = 0.0
    elif s > dur:
        s = dur
    if kind == 1:
        ws, we = seg[2], seg[3]
        x = math.pi * s / dur
        p = 0.5 * (1.0 + math.cos(x))
        pd = -0.5 * math.pi / dur * math.sin(x)
        if seg[4] > 0.5:
            return md * (we * we + (ws * ws - we * we) * p), md * (ws * ws - we * we) * pd
        w = we + (ws - we) * p
        wd = (ws - we) * pd
        return md * w * abs(w), 2.0 * md * abs(w) * wd
    amp = seg[2]
    w = seg[3]
    wd = 0.0
    for ell in range(1, 5):
        k = math.pi * ell / (2.0 * dur)
        cx = math.cos(k * s)
        sx = math.sin(k * s)
        w += seg[3 + ell] * cx + seg[7 + ell] * sx
        wd += k * (-seg[3 + ell] * sx + seg[7 + ell] * cx)
    w *= amp
    wd *= amp
    return md * w * abs(w), 2.0 * md * abs(w) * wd


@njit(cache=True)
def _replay(rw, rwd, rdt, s):
    n = rw.shape[0]
    q = s / rdt
    i = int(q)
    if i < 0:
        i = 0
    if i > n - 2:
        i = n - 2
    u = q - i
    h00 = (1.0 + 2.0 * u) * (1.0 - u) ** 2
    h10 = u * (1.0 - u) ** 2
    h01 = u * u * (3.0 - 2.0 * u)
    h11 = u * u * (u - 1.0)
    w = h00 * rw[i] + h10 * rdt * rwd[i] + h01 * rw[i + 1] + h11 * rdt * rwd[i + 1]
    g00 = 6.0 * u * u - 6.0 * u
    g10 = 3.0 * u * u - 4.0 * u + 1.0
    g01 = -g00
    g11 = 3.0 * u * u - 2.0 * u
    wd = (g00 * rw[i] + g01 * rw[i + 1]) / rdt + g10 * rwd[i] + g11 * rwd[i + 1]
    return w, wd


@njit(cache=True)
def _deriv(s, y, dy, aux, seg_d, seg_h, well, eta, rw, rwd, rdt, md, mh, ke):
    x1, x2, x3 = y[0], y[1], y[2]
    v1, v2, v3 = y[3], y[4], y[5]
    kd, kdd = _seg_curvature(seg_d, s, md)
    kh, khd = _seg_curvature(seg_h, s, md)
    c = 0.5 * (x3 - x1)
    cd = 0.5 * (v3 - v1)
    wd_rate = 0.0
    if well == 0:
        w = 0.0
    elif well == 1:
        w = c - eta * cd
    else:
        w, wd_rate = _replay(rw, rwd, rdt, s)
    d12 = x2 - x1
    d13 = x3 - x1
    d23 = x3 - x2
    aux[7] = 0.0
    if d12 < 1e-6 or d23 < 1e-6:
        aux[7] = 1.0
        d12 = max(d12, 1e-6)
        d23 = max(d23, 1e-6)
    f12 = ke / (d12 * d12)
    f13 = ke / (d13 * d13)
    f23 = ke / (d23 * d23)
    a1 = (-kd * (x1 + w) - f12 - f13) / md
    a2 = (-kh * x2 + f12 - f23) / mh
    a3 = (-kd * (x3 - w) + f13 + f23) / md
    dy[0], dy[1], dy[2] = v1, v2, v3
    dy[3], dy[4], dy[5] = a1, a2, a3
    if well == 1:
        wd_rate = cd - eta * 0.5 * (a3 - a1)

    # mode geometry of the symmetric crystal
    g = ke / (c * c * c)
    w_op2 = kd / md + 2.5 * g / md
    w_ip2 = kd / md + 2.0 * g / md
    w_h2 = kh / mh + 4.0 * g / mh
    u = 4.0 * math.sqrt(2.0) * g / math.sqrt(md * mh)
    v = w_h2 - w_ip2
    u_dot = -3.0 * u * cd / c
    v_dot = khd / mh - kdd / md - 3.0 * (cd / c) * (4.0 * g / mh - 2.0 * g / md)
    th_dot = 0.5 * (u_dot * v - u * v_dot) / (u * u + v * v)
    gam = math.sqrt(u * u + v * v)
    wa2 = 0.5 * (w_ip2 + w_h2 + gam)
    wb2 = 0.5 * (w_ip2 + w_h2 - gam)

    # dM_op = C h_op M_op with h_op = diag(1, w_op^2)
    dy[6] = -w_op2 * y[8]
    dy[7] = -w_op2 * y[9]
    dy[8] = y[6]
    dy[9] = y[7]

    # dM_ab = C h_ab M_ab; rows of C h_ab are fixed by h_ab's structure
    for j in range(4):
        pa = y[10 + j]
        pb = y[14 + j]
        xa = y[18 + j]
        xb = y[22 + j]
        dy[10 + j] = -th_dot * pb - wa2 * xa
        dy[14 + j] = th_dot * pa - wb2 * xb
        dy[18 + j] = pa - th_dot * xb
        dy[22 + j] = pb + th_dot * xa

    aux[0] = w
    aux[1] = kd
    aux[2] = kh
    aux[3] = kdd
    aux[4] = khd
    aux[5] = th_dot
    aux[6] = wd_rate


@njit(cache=True)
def _rk4_step(s, h, y, out, k1, k2, k3, k4, tmp, aux, seg_d, seg_h, well, eta,
              rw, rwd, rdt, md, mh, ke):
    n = y.shape[0]
    _deriv(s, y, k1, aux, seg_d, seg_h, well, eta, rw, rwd, rdt, md, mh, ke)
    bad = aux[7]
    for i in range(n):
        tmp[i] = y[i] + 0.5 * h * k1[i]
    _deriv(s + 0.5 * h, tmp, k2, aux, seg_d, seg_h, well, eta, rw, rwd, rdt, md, mh, ke)
    bad += aux[7]
    for i in range(n):
        tmp[i] = y[i] + 0.5 * h * k2[i]
    _deriv(s + 0.5 * h, tmp, k3, aux, seg_d, seg_h, well, eta, rw, rwd, rdt, md, mh, ke)
    bad += aux[7]
    for i in range(n):
        tmp[i] = y[i] + h * k3[i]
    _deriv(s + h, tmp, k4, aux, seg_d, seg_h, well, eta, rw, rwd, rdt, md, mh, ke)
    bad += aux[7]
    for i in range(n):
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return bad


@njit(cache=True)
def _record(rec, row, t, y, aux):
    rec[row, 0] = t
    for i in range(6):
        rec[row, 1 + i] = y[i]
    rec[row, 7] = -aux[0]
    rec[row, 8] = aux[0]
    for i in range(5):
        rec[row, 9 + i] = aux[1 + i]
    for i in range(20):
        rec[row, 14 + i] = y[6 + i]


@njit(cache=True)
def node_aux(s, y, seg_d, seg_h, well, eta, rw, rwd, rdt, md, mh, ke):
    """Well data and derivatives at a single node (used for the final record)."""
    dy = np.empty_like(y)
    aux = np.zeros(N_AUX)
    _deriv(s, y, dy, aux, seg_d, seg_h, well, eta, rw, rwd, rdt, md, mh, ke)
    return dy, aux


@njit(cache=True)
def run_phase(y, t0, duration, dt, seg_d, seg_h, well, eta, rw, rwd, rdt,
              md, mh, ke, threshold, x_ref, max_steps,
              rec, rec_count, rec_every, step_offset, tab_w, tab_wd):
    """Advance ``y`` in place through one phase.

    ``duration < 0`` marks the open-ended phase that stops when
    ``|x_D2 - x_ref| >= threshold``; the crossing is located by bisecting a
    partial RK4 step.  Node values of the well position and its rate are
    written to ``tab_w``/``tab_wd`` when those have room for every node.

    Returns ``(status, elapsed, n_steps, rec_count)``.
    """
    n = y.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    nxt = np.empty(n)
    aux = np.zeros(N_AUX)
    dy = np.empty(n)
    open_ended = duration < 0.0
    if open_ended:
        h = dt
        n_steps = max_steps
    else:
        n_steps = max(1, int(math.ceil(duration / dt - 1e-9)))
        h = duration / n_steps
    store = tab_w.shape[0] == n_steps + 1
    if open_ended and abs(y[2] - x_ref) >= threshold:
        return OK, 0.0, 0, rec_count
    for i in range(n_steps):
        s = i * h
        if (step_offset + i) % rec_every == 0 or store:
            _deriv(s, y, dy, aux, seg_d, seg_h, well, eta, rw, rwd, rdt, md, mh, ke)
            if store:
                tab_w[i] = aux[0]
                tab_wd[i] = aux[6]
            if (step_offset + i) % rec_every == 0 and rec_count < rec.shape[0]:
                _record(rec, rec_count, t0 + s, y, aux)
                rec_count += 1
        bad = _rk4_step(s, h, y, nxt, k1, k2, k3, k4, tmp, aux, seg_d, seg_h,
                        well, eta, rw, rwd, rdt, md, mh, ke)
        if bad > 0.0:
            return COLLISION, s, i, rec_count
        if open_ended and abs(nxt[2] - x_ref) >= threshold:
            lo, hi = 0.0, h
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                _rk4_step(s, mid, y, nxt, k1, k2, k3, k4, tmp, aux, seg_d, seg_h,
                          well, eta, rw, rwd, rdt, md, mh, ke)
                if abs(nxt[2] - x_ref) >= threshold:
                    hi = mid
                else:
                    lo = mid
            _rk4_step(s, hi, y, nxt, k1, k2, k3, k4, tmp, aux, seg_d, seg_h,
                      well, eta, rw, rwd, rdt, md, mh, ke)
            for j in range(n):
                y[j] = nxt[j]
            return OK, s + hi, i + 1, rec_count
        for j in range(n):
            y[j] = nxt[j]
    if open_ended:
        return NOT_CAUGHT, n_steps * h, n_steps, rec_count
    if store:
        _deriv(n_steps * h, y, dy, aux, seg_d, seg_h, well, eta, rw, rwd, rdt, md, mh, ke)
        tab_w[n_steps] = aux[0]
        tab_wd[n_steps] = aux[6]
    return OK, duration, n_steps, rec_count
