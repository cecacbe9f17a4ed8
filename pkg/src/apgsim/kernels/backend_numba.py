"""numba @njit twins of the backend_numpy kernels.

Loop-structured for JIT compilation; summation order is fixed so repeated
runs are bit-identical. Compiled lazily on first call, cached on disk.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_JIT = dict(cache=True, fastmath=False, nogil=True)


@njit(**_JIT)
def rollout_batch(X, s0, v0, dt, v_max):
    B, n, T = X.shape
    S = np.empty((B, n, T + 1))
    V = np.empty((B, n, T + 1))
    for b in range(B):
        for i in range(n):
            S[b, i, 0] = s0[i]
            V[b, i, 0] = v0[i]
            for t in range(T):
                v_next = V[b, i, t] + X[b, i, t] * dt
                if v_next < 0.0:
                    v_next = 0.0
                elif v_next > v_max:
                    v_next = v_max
                a_eff = (v_next - V[b, i, t]) / dt
                S[b, i, t + 1] = S[b, i, t] + V[b, i, t] * dt + 0.5 * a_eff * dt * dt
                V[b, i, t + 1] = v_next
    return S, V


@njit(inline="always")
def _pair_gap(s_i, v_i, s_j, v_j, scp_i, scp_j, v_eps, ttcp_cap, fade):
    d_i = scp_i - s_i
    d_j = scp_j - s_j
    if d_i <= 0.0 or d_j <= 0.0:
        return 0.0
    vi = v_i if v_i > v_eps else v_eps
    vj = v_j if v_j > v_eps else v_eps
    t_i = d_i / vi
    t_j = d_j / vj
    if t_i > ttcp_cap:
        t_i = ttcp_cap
    if t_j > ttcp_cap:
        t_j = ttcp_cap
    g_i = d_i / fade
    if g_i > 1.0:
        g_i = 1.0
    g_j = d_j / fade
    if g_j > 1.0:
        g_j = 1.0
    return abs(t_i - t_j) * g_i * g_j


@njit(**_JIT)
def potential_batch(X, s0, v0, plen, dt, v_max, gamma, wv, wd, wc, v_eps,
                    ttcp_cap, fade, phi, alpha, beta, cp_i, cp_j, cp_si, cp_sj):
    B, n, T = X.shape
    S, V = rollout_batch(X, s0, v0, dt, v_max)
    disc = gamma ** np.arange(T + 1)
    out = np.zeros(B)
    m = len(cp_i)
    for b in range(B):
        acc = 0.0
        for i in range(n):
            w = phi[i] * alpha[i]
            for t in range(T + 1):
                a = X[b, i, t] if t < T else 0.0
                d_o = plen[i] - S[b, i, t]
                if d_o < 0.0:
                    d_o = 0.0
                acc += w * disc[t] * (wv * V[b, i, t] - wd * d_o - wc * a * a)
        for p in range(m):
            i = cp_i[p]
            j = cp_j[p]
            w = 0.25 * (phi[i] + phi[j]) * (beta[i] + beta[j])
            for t in range(T + 1):
                r = _pair_gap(S[b, i, t], V[b, i, t], S[b, j, t], V[b, j, t],
                              cp_si[p], cp_sj[p], v_eps, ttcp_cap, fade)
                acc += w * disc[t] * r
        out[b] = acc
    return out


@njit(**_JIT)
def utility_batch(X, veh, s0, v0, plen, dt, v_max, gamma, wv, wd, wc, v_eps,
                  ttcp_cap, fade, alpha_i, beta_i, cp_i, cp_j, cp_si, cp_sj):
    B, n, T = X.shape
    S, V = rollout_batch(X, s0, v0, dt, v_max)
    disc = gamma ** np.arange(T + 1)
    out = np.zeros(B)
    m = len(cp_i)
    for b in range(B):
        acc = 0.0
        for t in range(T + 1):
            a = X[b, veh, t] if t < T else 0.0
            d_o = plen[veh] - S[b, veh, t]
            if d_o < 0.0:
                d_o = 0.0
            acc += disc[t] * (wv * V[b, veh, t] - wd * d_o - wc * a * a)
        acc *= alpha_i
        pair_acc = 0.0
        for p in range(m):
            if cp_i[p] != veh and cp_j[p] != veh:
                continue
            i = cp_i[p]
            j = cp_j[p]
            for t in range(T + 1):
                r = _pair_gap(S[b, i, t], V[b, i, t], S[b, j, t], V[b, j, t],
                              cp_si[p], cp_sj[p], v_eps, ttcp_cap, fade)
                pair_acc += disc[t] * r
        out[b] = acc + beta_i * pair_acc
    return out


@njit(inline="always")
def _position_on(path, s, wp_s, wp_x, wp_y):
    W = wp_s.shape[1]
    idx = 0
    for k in range(W):
        if wp_s[path, k] <= s:
            idx = k
        else:
            break
    if idx > W - 2:
        idx = W - 2
    lo = wp_s[path, idx]
    hi = wp_s[path, idx + 1]
    frac = (s - lo) / (hi - lo)
    x = wp_x[path, idx] + frac * (wp_x[path, idx + 1] - wp_x[path, idx])
    y = wp_y[path, idx] + frac * (wp_y[path, idx + 1] - wp_y[path, idx])
    return x, y


@njit(inline="always")
def _pose_on(path, s, wp_s, wp_x, wp_y, wp_tx, wp_ty):
    W = wp_s.shape[1]
    idx = 0
    for k in range(W):
        if wp_s[path, k] <= s:
            idx = k
        else:
            break
    if idx > W - 2:
        idx = W - 2
    lo = wp_s[path, idx]
    hi = wp_s[path, idx + 1]
    frac = (s - lo) / (hi - lo)
    x = wp_x[path, idx] + frac * (wp_x[path, idx + 1] - wp_x[path, idx])
    y = wp_y[path, idx] + frac * (wp_y[path, idx + 1] - wp_y[path, idx])
    return x, y, wp_tx[path, idx], wp_ty[path, idx]


@njit(inline="always")
def _sat_separation(dx, dy, uxi, uyi, uxj, uyj, hl, hw):
    """Largest signed separation over the four box axes; negative values
    mean the footprints overlap by that depth."""
    best = -1e18
    for a in range(4):
        if a == 0:
            ax, ay = uxi, uyi
        elif a == 1:
            ax, ay = -uyi, uxi
        elif a == 2:
            ax, ay = uxj, uyj
        else:
            ax, ay = -uyj, uxj
        span = abs(dx * ax + dy * ay)
        proj_i = hl * abs(ax * uxi + ay * uyi) + hw * abs(-ax * uyi + ay * uxi)
        proj_j = hl * abs(ax * uxj + ay * uyj) + hw * abs(-ax * uyj + ay * uxj)
        sep = span - proj_i - proj_j
        if sep > best:
            best = sep
    return best


@njit(**_JIT)
def collision_penalty_batch(X, s0, v0, dt, v_max, d_safe, clearance, hl, hw,
                            t_sep, t_gate, v_eps,
                            cp_i, cp_j, cp_si, cp_sj,
                            mz_i, mz_j, mz_zli, mz_zhi, mz_zlj, mz_zhj,
                            pidx, wp_s, wp_x, wp_y, wp_tx, wp_ty,
                            fp_i, fp_j, f_sign_i, f_off_i, f_sign_j, f_off_j,
                            f_lim, gap_req):
    B, n, T = X.shape
    S, V = rollout_batch(X, s0, v0, dt, v_max)
    out = np.zeros(B)
    m = len(cp_i)
    k = len(fp_i)
    # half-step midpoints are interleaved with the plan samples so fast
    # vehicles cannot alias through a protected zone between samples
    reach = 2.0 * (hl + hw) + clearance + 2.0
    for b in range(B):
        acc = 0.0
        for p in range(m):
            i = cp_i[p]
            j = cp_j[p]
            for t in range(1, T + 1):
                for half in range(2):
                    if half == 0:
                        s_i = 0.5 * (S[b, i, t - 1] + S[b, i, t])
                        s_j = 0.5 * (S[b, j, t - 1] + S[b, j, t])
                    else:
                        s_i = S[b, i, t]
                        s_j = S[b, j, t]
                    d_i = cp_si[p] - s_i
                    d_j = cp_sj[p] - s_j
                    if d_i <= 0.0 or d_j <= 0.0 or d_i > d_safe or d_j > d_safe:
                        continue
                    xi, yi = _position_on(pidx[i], s_i, wp_s, wp_x, wp_y)
                    xj, yj = _position_on(pidx[j], s_j, wp_s, wp_x, wp_y)
                    dist = np.sqrt((xi - xj) ** 2 + (yi - yj) ** 2)
                    c = d_safe - dist
                    if c > 0.0:
                        acc += c * c
        # zone time separation: while neither vehicle has cleared a shared
        # crossing or merge zone and one is about to enter it, the later
        # vehicle's entry must trail the earlier one's exit by t_sep
        for p in range(len(mz_i)):
            i = mz_i[p]
            j = mz_j[p]
            for t in range(1, T + 1):
                vi = V[b, i, t] if V[b, i, t] > v_eps else v_eps
                vj = V[b, j, t] if V[b, j, t] > v_eps else v_eps
                exit_i = (mz_zhi[p] - S[b, i, t]) / vi
                exit_j = (mz_zhj[p] - S[b, j, t]) / vj
                if exit_i > 0.0 and exit_j > 0.0:
                    enter_i = (mz_zli[p] - S[b, i, t]) / vi
                    enter_j = (mz_zlj[p] - S[b, j, t]) / vj
                    if min(enter_i, enter_j) <= t_gate:
                        pet = max(enter_j - exit_i, enter_i - exit_j)
                        c = t_sep - pet
                        if c > 0.0:
                            acc += c * c
        # footprint clearance between every pair, any relative pose
        for i in range(n):
            for j in range(i + 1, n):
                for t in range(1, T + 1):
                    for half in range(2):
                        if half == 0:
                            s_i = 0.5 * (S[b, i, t - 1] + S[b, i, t])
                            s_j = 0.5 * (S[b, j, t - 1] + S[b, j, t])
                        else:
                            s_i = S[b, i, t]
                            s_j = S[b, j, t]
                        xi, yi, txi, tyi = _pose_on(pidx[i], s_i, wp_s, wp_x,
                                                    wp_y, wp_tx, wp_ty)
                        xj, yj, txj, tyj = _pose_on(pidx[j], s_j, wp_s, wp_x,
                                                    wp_y, wp_tx, wp_ty)
                        dx = xi - xj
                        dy = yi - yj
                        if abs(dx) + abs(dy) > reach:
                            continue
                        sep = _sat_separation(dx, dy, txi, tyi, txj, tyj, hl, hw)
                        c = clearance - sep
                        if c > 0.0:
                            acc += c * c
        for p in range(k):
            i = fp_i[p]
            j = fp_j[p]
            for t in range(1, T + 1):
                ci = f_sign_i[p] * S[b, i, t] + f_off_i[p]
                cj = f_sign_j[p] * S[b, j, t] + f_off_j[p]
                if ci > f_lim[p] or cj > f_lim[p]:
                    continue
                c = gap_req - abs(ci - cj)
                if c > 0.0:
                    acc += c * c
        out[b] = acc
    return out


@njit(**_JIT)
def dynamics_penalty_batch(X, v0, dt, v_max):
    B, n, T = X.shape
    out = np.zeros(B)
    for b in range(B):
        acc = 0.0
        for i in range(n):
            v = v0[i]
            for t in range(T):
                v_raw = v + X[b, i, t] * dt
                if v_raw > v_max:
                    acc += (v_raw - v_max) ** 2
                    v = v_max
                elif v_raw < 0.0:
                    acc += v_raw * v_raw
                    v = 0.0
                else:
                    v = v_raw
        out[b] = acc
    return out


@njit(**_JIT)
def penalized_batch(X, s0, v0, plen, dt, v_max, gamma, wv, wd, wc, v_eps,
                    ttcp_cap, fade, phi, alpha, beta,
                    cp_i, cp_j, cp_si, cp_sj,
                    mz_i, mz_j, mz_zli, mz_zhi, mz_zlj, mz_zhj,
                    d_safe, clearance, hl, hw, t_sep, t_gate,
                    pidx, wp_s, wp_x, wp_y, wp_tx, wp_ty,
                    fp_i, fp_j, f_sign_i, f_off_i, f_sign_j, f_off_j,
                    f_lim, gap_req, lam, mu_pen):
    """Fused hot path: negated potential plus weighted penalty terms."""
    pot = potential_batch(X, s0, v0, plen, dt, v_max, gamma, wv, wd, wc,
                          v_eps, ttcp_cap, fade, phi, alpha, beta,
                          cp_i, cp_j, cp_si, cp_sj)
    col = collision_penalty_batch(X, s0, v0, dt, v_max, d_safe, clearance,
                                  hl, hw, t_sep, t_gate, v_eps,
                                  cp_i, cp_j, cp_si, cp_sj,
                                  mz_i, mz_j, mz_zli, mz_zhi, mz_zlj, mz_zhj,
                                  pidx, wp_s, wp_x, wp_y, wp_tx, wp_ty,
                                  fp_i, fp_j, f_sign_i, f_off_i,
                                  f_sign_j, f_off_j, f_lim, gap_req)
    dyn = dynamics_penalty_batch(X, v0, dt, v_max)
    return -pot + lam * col + mu_pen * dyn
