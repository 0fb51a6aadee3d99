"""Compiled event-driven integrator for the built-in policies.

Policy codes: 0 = uncoordinated, 1 = headway regulation, 2 = size
management. ``par`` packs F, R, Theta, background, offramp, l/gamma, alpha,
lattice step and the q2m threshold (see ``pack_params``).
"""

from __future__ import annotations

import numpy as np
from numba import njit

TOL = 1e-9

START, ARRIVAL, BOUNDARY, SWITCH, HORIZON = 0, 1, 2, 3, 4

P_F, P_R, P_THETA, P_BG, P_OFF, P_M, P_ALPHA, P_STEP, P_THR = range(9)


def pack_params(p, alpha=0.0, step=1.0, thr=0.0):
    return np.array(
        [p.F, p.R, p.Theta, p.background, p.offramp_demand, p.platoon_mass, alpha, step, thr],
        dtype=np.float64,
    )


@njit(cache=True)
def on_lattice(x, step):
    k = np.floor(x / step + 0.5)
    return abs(x - k * step) <= TOL


@njit(cache=True)
def mu_code(code, q0, q1m, q1o, q2, par):
    if code == 0:
        return 0.0
    if q0 <= TOL or q1m > TOL or q2 >= par[P_THETA] - TOL:
        return 0.0
    if code == 1:
        if q2 <= TOL:
            return par[P_ALPHA]
    elif q2 <= par[P_THR] + TOL:
        return par[P_ALPHA]
    if not on_lattice(q0, par[P_STEP]):
        return par[P_ALPHA]
    return 0.0


@njit(cache=True)
def flows(q1m, q1o, q2, u, par):
    F = par[P_F]
    R = par[P_R]
    spill = q2 >= par[P_THETA] - TOL
    cap1 = F - R if spill else F
    if q1m <= TOL:
        f1 = min(par[P_BG] + u, cap1)
    else:
        f1 = cap1
    if q2 <= TOL:
        f2 = min(f1, F - R)
    else:
        f2 = F - R
    room = cap1 - f1
    if q1o <= TOL:
        r = min(par[P_OFF], room, R)
    else:
        r = min(room, R)
    return f1, f2, max(r, 0.0)


@njit(cache=True)
def _snap(q, par, code):
    for i in range(4):
        if abs(q[i]) <= TOL:
            q[i] = 0.0
    if abs(q[3] - par[P_THETA]) <= TOL:
        q[3] = par[P_THETA]
    if code != 0 and q[0] > 0.0:
        k = np.floor(q[0] / par[P_STEP] + 0.5)
        if abs(q[0] - k * par[P_STEP]) <= TOL:
            q[0] = k * par[P_STEP]


@njit(cache=True)
def _grow(times, kinds, before, after):
    n = times.shape[0] * 2
    t2 = np.empty(n)
    k2 = np.empty(n, dtype=np.int8)
    b2 = np.empty((n, 4))
    a2 = np.empty((n, 4))
    m = times.shape[0]
    t2[:m] = times
    k2[:m] = kinds
    b2[:m] = before
    a2[:m] = after
    return t2, k2, b2, a2


@njit(cache=True)
def run(code, par, arrivals, horizon, q_init, max_crossings):
    """Integrate one sample path exactly.

    Returns (times, kinds, before, after, n_events, status); status 1 means
    the crossing guard fired and the arrays hold the path up to that point.
    """
    cap = 1024 + 4 * arrivals.shape[0]
    times = np.empty(cap)
    kinds = np.empty(cap, dtype=np.int8)
    before = np.empty((cap, 4))
    after = np.empty((cap, 4))
    q = q_init.copy()
    _snap(q, par, code)
    times[0] = 0.0
    kinds[0] = START
    before[0] = q
    after[0] = q
    n = 1
    t = 0.0
    theta = par[P_THETA]
    m = par[P_M]
    step = par[P_STEP]
    thr = par[P_THR]
    n_arr = arrivals.shape[0]
    ai = 0
    while True:
        t_next = arrivals[ai] if ai < n_arr else horizon
        crossings = 0
        while t < t_next:
            u = mu_code(code, q[0], q[1], q[2], q[3], par)
            f1, f2, r = flows(q[1], q[2], q[3], u, par)
            g0 = -u
            g1 = par[P_BG] + u - f1
            g2 = par[P_OFF] - r
            g3 = f1 - f2
            tau = t_next - t
            hit = -1
            target = 0.0
            kind = BOUNDARY
            if g0 < 0.0 and q[0] > TOL:
                if code != 0:
                    k = np.ceil(q[0] / step - TOL / step) - 1.0
                    s = max(k * step, 0.0)
                else:
                    s = 0.0
                c = (q[0] - s) / -g0
                if c < tau:
                    tau, hit, target = c, 0, s
                    kind = BOUNDARY if s == 0.0 else SWITCH
            if g1 < 0.0 and q[1] > TOL:
                c = q[1] / -g1
                if c < tau:
                    tau, hit, target, kind = c, 1, 0.0, BOUNDARY
            if g2 < 0.0 and q[2] > TOL:
                c = q[2] / -g2
                if c < tau:
                    tau, hit, target, kind = c, 2, 0.0, BOUNDARY
            if g3 < 0.0 and q[3] > TOL:
                c = q[3] / -g3
                if c < tau:
                    tau, hit, target, kind = c, 3, 0.0, BOUNDARY
                if code == 2 and q[3] > thr + TOL and thr > 0.0:
                    c = (q[3] - thr) / -g3
                    if c < tau:
                        tau, hit, target, kind = c, 3, thr, SWITCH
            elif g3 > 0.0 and q[3] < theta - TOL:
                c = (theta - q[3]) / g3
                if c < tau:
                    tau, hit, target, kind = c, 3, theta, BOUNDARY
            q[0] += g0 * tau
            q[1] += g1 * tau
            q[2] += g2 * tau
            q[3] += g3 * tau
            if hit < 0:
                t = t_next
                _snap(q, par, code)
                break
            t += tau
            q[hit] = target
            _snap(q, par, code)
            for i in range(4):
                if q[i] < 0.0:
                    q[i] = 0.0
            if n == times.shape[0]:
                times, kinds, before, after = _grow(times, kinds, before, after)
            times[n] = t
            kinds[n] = kind
            before[n] = q
            after[n] = q
            n += 1
            crossings += 1
            if crossings > max_crossings:
                return times, kinds, before, after, n, 1
        if n == times.shape[0]:
            times, kinds, before, after = _grow(times, kinds, before, after)
        times[n] = t
        before[n] = q
        if ai < n_arr:
            if code == 0:
                over = q[3] + m - theta
                if over > 0.0:
                    q[1] += over
                q[3] = min(theta, q[3] + m)
            else:
                q[0] += m
            _snap(q, par, code)
            kinds[n] = ARRIVAL
            after[n] = q
            n += 1
            ai += 1
        else:
            kinds[n] = HORIZON
            after[n] = q
            n += 1
            break
    return times, kinds, before, after, n, 0


@njit(cache=True)
def level_occupancy(times, before, after, n, step, nmax):
    """Time spent by ceil((q0m + q1m + q2m) / step) at each level 0..nmax."""
    occ = np.zeros(nmax + 1)
    for i in range(n - 1):
        dt = times[i + 1] - times[i]
        if dt <= 0.0:
            continue
        xa = (after[i, 0] + after[i, 1] + after[i, 3]) / step
        xb = (before[i + 1, 0] + before[i + 1, 1] + before[i + 1, 3]) / step
        if abs(xb - xa) <= 1e-12:
            lv = int(np.ceil(xa - 1e-9))
            occ[min(max(lv, 0), nmax)] += dt
            continue
        lo = min(xa, xb)
        hi = max(xa, xb)
        rate = dt / (hi - lo)
        k = int(np.floor(lo))
        while k < hi:
            a = max(lo, float(k))
            b = min(hi, float(k + 1))
            if b > a:
                lv = k + 1
                occ[min(max(lv, 0), nmax)] += (b - a) * rate
            k += 1
    return occ
