"""Compiled inner loops of the backward induction.

Value grids live on per-node tensor axes ``U[node, :]`` (liquidation value,
ascending, from 0 to the node's payoff ceiling) and ``V[node, :]`` (position
value, ascending, containing 0).  Child values are read by bilinear
interpolation in (u, v).  Above the ceiling the value is exactly 0; beyond
the v-range the value is constant in v, so clamping is exact.
"""
from __future__ import annotations

import os

import numba as nb
import numpy as np

# the TBB layer only warns about old system libraries; prefer the others
# unless the user has picked a layer explicitly
if not {"NUMBA_THREADING_LAYER", "NUMBA_THREADING_LAYER_PRIORITY"} & set(os.environ):
    nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

_TIE = 1e-14


@nb.njit(cache=True, inline="always")
def _bracket(axis, x):
    # index j with axis[j] <= x <= axis[j+1], x already clipped to the axis range
    lo = 0
    hi = axis.shape[0] - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if axis[mid] <= x:
            lo = mid
        else:
            hi = mid
    return lo


@nb.njit(cache=True)
def child_value(terminal, c, u, v, phi_next, J_next, U_next, V_next, umax_next):
    """Value of child node ``c`` at state (u, v)."""
    if u < 0.0:
        u = 0.0
    if terminal:
        d = phi_next[c] - u
        return d if d > 0.0 else 0.0
    top = umax_next[c]
    if u >= top:
        return 0.0
    ua = U_next[c]
    va = V_next[c]
    nv = va.shape[0]
    if v <= va[0]:
        v = va[0]
    elif v >= va[nv - 1]:
        v = va[nv - 1]
    i = _bracket(ua, u)
    j = _bracket(va, v)
    tu = (u - ua[i]) / (ua[i + 1] - ua[i])
    tv = (v - va[j]) / (va[j + 1] - va[j])
    g = J_next[c]
    return (
        (1.0 - tu) * ((1.0 - tv) * g[i, j] + tv * g[i, j + 1])
        + tu * ((1.0 - tv) * g[i + 1, j] + tv * g[i + 1, j + 1])
    )


@nb.njit(cache=True, inline="always")
def _next_wealth(u, v, w, rho, lam, mu):
    y = v + w
    # w^- - v^+ and v^- - w^+, both exactly 0 at w = -v
    a_part = (-w if w < 0.0 else 0.0) - (v if v > 0.0 else 0.0)
    b_part = (-v if v < 0.0 else 0.0) - (w if w > 0.0 else 0.0)
    out = u + (1.0 - mu) * a_part + (1.0 + lam) * b_part
    if y > 0.0:
        out += rho * (1.0 - mu) * y
    else:
        out += rho * (1.0 + lam) * y
    return out


@nb.njit(cache=True)
def objective(u, v, w, cu, cd, a, b, p, lam, mu, terminal, phi_next, J_next, U_next, V_next, umax_next):
    y = v + w
    uu = _next_wealth(u, v, w, 1.0 + b, lam, mu)
    ud = _next_wealth(u, v, w, 1.0 - a, lam, mu)
    ju = child_value(terminal, cu, uu, y * (1.0 + b), phi_next, J_next, U_next, V_next, umax_next)
    jd = child_value(terminal, cd, ud, y * (1.0 - a), phi_next, J_next, U_next, V_next, umax_next)
    return p * ju + (1.0 - p) * jd


@nb.njit(cache=True)
def interval(u, v, a, b, lam, mu):
    buy_den = lam + mu + a * (1.0 - mu)
    sell_den = lam + mu + b * (1.0 + lam)
    if v >= 0.0:
        lo = -v - u / sell_den
        slack = u - a * (1.0 - mu) * v
        if slack >= 0.0:
            hi = slack / buy_den
        else:
            hi = slack / (a * (1.0 - mu))
    else:
        hi = -v + u / buy_den
        slack = u + b * (1.0 + lam) * v
        if slack >= 0.0:
            lo = -slack / sell_den
        else:
            lo = -slack / (b * (1.0 + lam))
    if lo > -v:
        lo = -v
    if hi < -v:
        hi = -v
    return lo, hi


@nb.njit(cache=True, inline="always")
def _better(val, w, v, best, wbest):
    if val < best - _TIE * (1.0 + abs(best)):
        return True
    if val <= best + _TIE * (1.0 + abs(best)) and abs(v + w) < abs(v + wbest):
        return True
    return False


@nb.njit(cache=True)
def _terminal_roots(u, v, lo, hi, target, rho, lam, mu, out, m):
    # transfers at which the child's wealth equals its payoff; the wealth is
    # affine in w between the kinks w = 0 and w = -v
    k0 = min(0.0, -v)
    k1 = max(0.0, -v)
    edges = (lo, k0, k1, hi)
    for e in range(3):
        p0 = max(edges[e], lo)
        p1 = min(edges[e + 1], hi)
        if p1 <= p0:
            continue
        g0 = _next_wealth(u, v, p0, rho, lam, mu)
        g1 = _next_wealth(u, v, p1, rho, lam, mu)
        if g1 == g0:
            continue
        t = (target - g0) / (g1 - g0)
        if 0.0 <= t <= 1.0:
            out[m] = p0 + t * (p1 - p0)
            m += 1
    return m


@nb.njit(cache=True)
def inner_min(
    u, v, cu, cd, a, b, p, lam, mu, terminal, phi_next, J_next, U_next, V_next, umax_next,
    n_scan, rounds, n_refine, w_hint,
):
    """Minimal one-step expected child value over admissible transfers.

    Returns (value, w*, residual) where the residual is the improvement of
    the last refinement round.  Among (near-)ties the transfer leaving the
    smallest position |v + w| wins.
    """
    lo, hi = interval(u, v, a, b, lam, mu)
    extra = np.empty(16)
    m = 0
    extra[m] = -v
    m += 1
    extra[m] = lo
    m += 1
    extra[m] = hi
    m += 1
    if lo <= 0.0 <= hi:
        extra[m] = 0.0
        m += 1
    if lo <= w_hint <= hi:
        extra[m] = w_hint
        m += 1
    if terminal:
        m = _terminal_roots(u, v, lo, hi, phi_next[cu], 1.0 + b, lam, mu, extra, m)
        m = _terminal_roots(u, v, lo, hi, phi_next[cd], 1.0 - a, lam, mu, extra, m)

    args_best = objective(u, v, -v, cu, cd, a, b, p, lam, mu, terminal, phi_next, J_next, U_next, V_next, umax_next)
    best = args_best
    wbest = -v
    for e in range(1, m):
        w = extra[e]
        val = objective(u, v, w, cu, cd, a, b, p, lam, mu, terminal, phi_next, J_next, U_next, V_next, umax_next)
        if _better(val, w, v, best, wbest):
            best = val
            wbest = w
    width = hi - lo
    if width <= 0.0 or n_scan < 2:
        return best, wbest, 0.0
    step = width / (n_scan - 1)
    for s in range(n_scan):
        w = lo + s * step
        val = objective(u, v, w, cu, cd, a, b, p, lam, mu, terminal, phi_next, J_next, U_next, V_next, umax_next)
        if _better(val, w, v, best, wbest):
            best = val
            wbest = w
    residual = 0.0
    radius = step
    for r in range(rounds):
        before = best
        left = max(lo, wbest - radius)
        right = min(hi, wbest + radius)
        if right <= left or n_refine < 2:
            break
        sub = (right - left) / (n_refine - 1)
        for s in range(n_refine):
            w = left + s * sub
            val = objective(u, v, w, cu, cd, a, b, p, lam, mu, terminal, phi_next, J_next, U_next, V_next, umax_next)
            if _better(val, w, v, best, wbest):
                best = val
                wbest = w
        residual = before - best
        radius = sub
    return best, wbest, residual


@nb.njit(cache=True, parallel=True)
def backward_step(
    U, V, phi, umax, up, dn, a, b, p, lam, mu, terminal, phi_next, J_next, U_next, V_next, umax_next,
    n_scan, rounds, n_refine, J, W, R,
):
    """Fill the value grid J and policy grid W of every node in one step.

    Rows are swept in increasing u and each column is warm-started from the
    previous row's optimum, which stays admissible when u grows; this keeps
    every column non-increasing in u.  Positions beyond the wealth-dependent
    caps u/(a(1-mu)) and -u/(b(1+lam)) all share the optimum found at the cap.
    """
    n_nodes = U.shape[0]
    n_u = U.shape[1]
    n_v = V.shape[1]
    for i in nb.prange(n_nodes):
        cu = up[i]
        cd = dn[i]
        top = umax[i]
        hint = np.empty(n_v)
        for jv in range(n_v):
            hint[jv] = -V[i, jv]
        y_long = 0.0
        y_short = 0.0
        for iu in range(n_u):
            u = U[i, iu]
            if u >= top:
                for jv in range(n_v):
                    J[i, iu, jv] = 0.0
                    W[i, iu, jv] = -V[i, jv]
                    R[i, iu, jv] = 0.0
                continue
            exercise = phi[i] - u
            cap_long = u / (a * (1.0 - mu))
            cap_short = -u / (b * (1.0 + lam))
            val_long = 0.0
            res_long = 0.0
            val_short = 0.0
            res_short = 0.0
            if V[i, n_v - 1] >= cap_long:
                val_long, w, res_long = inner_min(
                    u, cap_long, cu, cd, a, b, p, lam, mu, terminal, phi_next, J_next, U_next,
                    V_next, umax_next, n_scan, rounds, n_refine, y_long - cap_long,
                )
                y_long = cap_long + w
            if V[i, 0] <= cap_short:
                val_short, w, res_short = inner_min(
                    u, cap_short, cu, cd, a, b, p, lam, mu, terminal, phi_next, J_next, U_next,
                    V_next, umax_next, n_scan, rounds, n_refine, y_short - cap_short,
                )
                y_short = cap_short + w
            for jv in range(n_v):
                v = V[i, jv]
                if v >= cap_long:
                    val = val_long
                    w = y_long - v
                    res = res_long
                elif v <= cap_short:
                    val = val_short
                    w = y_short - v
                    res = res_short
                else:
                    val, w, res = inner_min(
                        u, v, cu, cd, a, b, p, lam, mu, terminal, phi_next, J_next, U_next, V_next,
                        umax_next, n_scan, rounds, n_refine, hint[jv],
                    )
                hint[jv] = w
                J[i, iu, jv] = exercise if exercise > val else val
                W[i, iu, jv] = w
                R[i, iu, jv] = res
    return J, W, R


@nb.njit(cache=True)
def _exact_last(u, v, phi_up, phi_dn, a, b, p, lam, mu):
    # one decision before terminal children: the objective is piecewise linear
    # in w with kinks at 0, -v and the two payoff roots, so checking those and
    # the interval ends is exhaustive
    lo, hi = interval(u, v, a, b, lam, mu)
    cand = np.empty(16)
    m = 0
    for w in (-v, lo, hi):
        cand[m] = w
        m += 1
    if lo <= 0.0 <= hi:
        cand[m] = 0.0
        m += 1
    m = _terminal_roots(u, v, lo, hi, phi_up, 1.0 + b, lam, mu, cand, m)
    m = _terminal_roots(u, v, lo, hi, phi_dn, 1.0 - a, lam, mu, cand, m)
    best = np.inf
    for e in range(m):
        w = cand[e]
        gu = phi_up - _next_wealth(u, v, w, 1.0 + b, lam, mu)
        gd = phi_dn - _next_wealth(u, v, w, 1.0 - a, lam, mu)
        val = p * max(gu, 0.0) + (1.0 - p) * max(gd, 0.0)
        if val < best:
            best = val
    return best


@nb.njit(cache=True)
def oracle_node(depth, idx, u, v, n, phis, a, b, p, lam, mu, n_grid):
    """Brute-force J at path node ``idx`` of ``depth`` from the exact state (u, v).

    ``phis`` stores payoffs heap-style: node ``(k, i)`` sits at ``2**k - 1 + i``
    and its children are ``(k + 1, 2i)`` (up) and ``(k + 1, 2i + 1)`` (down).
    """
    if u < 0.0:
        u = 0.0
    now = phis[(1 << depth) - 1 + idx] - u
    if now < 0.0:
        now = 0.0
    if depth == n:
        return now
    if depth == n - 1:
        base = (1 << n) - 1
        cont = _exact_last(u, v, phis[base + 2 * idx], phis[base + 2 * idx + 1], a, b, p, lam, mu)
        return now if now > cont else cont
    lo, hi = interval(u, v, a, b, lam, mu)
    best = np.inf
    total = n_grid + 4
    for s in range(total):
        if s < n_grid:
            w = lo + (hi - lo) * s / (n_grid - 1) if n_grid > 1 else lo
        elif s == n_grid:
            w = -v
        elif s == n_grid + 1:
            w = lo
        elif s == n_grid + 2:
            w = hi
        else:
            if not (lo <= 0.0 <= hi):
                continue
            w = 0.0
        y = v + w
        ju = oracle_node(depth + 1, 2 * idx, _next_wealth(u, v, w, 1.0 + b, lam, mu), y * (1.0 + b),
                         n, phis, a, b, p, lam, mu, n_grid)
        jd = oracle_node(depth + 1, 2 * idx + 1, _next_wealth(u, v, w, 1.0 - a, lam, mu), y * (1.0 - a),
                         n, phis, a, b, p, lam, mu, n_grid)
        val = p * ju + (1.0 - p) * jd
        if val < best:
            best = val
    return now if now > best else best
