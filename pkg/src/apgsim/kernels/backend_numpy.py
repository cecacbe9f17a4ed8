"""Vectorized numpy implementations of the hot evaluation kernels.

Every function here has a loop-style twin in backend_numba.py with the
same signature; the package selects one set at import time. Batch inputs
X have shape (B, n, T): B candidate profiles, n vehicles, T planned
accelerations per vehicle.
"""

from __future__ import annotations

import numpy as np


def rollout_batch(X, s0, v0, dt, v_max):
    """Integrate the planning recurrence for a batch of profiles.

    v[t+1] = clip(v[t] + a[t]*dt, 0, v_max); the effective acceleration
    (reduced where the clip binds) drives the position update.
    Returns (S, V) of shape (B, n, T+1).
    """
    B, n, T = X.shape
    S = np.empty((B, n, T + 1))
    V = np.empty((B, n, T + 1))
    S[:, :, 0] = s0
    V[:, :, 0] = v0
    for t in range(T):
        v_next = np.clip(V[:, :, t] + X[:, :, t] * dt, 0.0, v_max)
        a_eff = (v_next - V[:, :, t]) / dt
        S[:, :, t + 1] = S[:, :, t] + V[:, :, t] * dt + 0.5 * a_eff * dt * dt
        V[:, :, t + 1] = v_next
    return S, V


def _self_reward_terms(X, S, V, plen, wv, wd, wc):
    """Per-step self reward for every vehicle: (B, n, T+1)."""
    B, n, T = X.shape
    A = np.zeros((B, n, T + 1))
    A[:, :, :T] = X
    d_o = np.maximum(plen[None, :, None] - S, 0.0)
    return wv * V - wd * d_o - wc * A * A


def _pair_reward_terms(S, V, v_eps, ttcp_cap, fade, cp_i, cp_j, cp_si, cp_sj):
    """Per-step pair reward (time-gap at the shared conflict) for each
    crossing pair: (B, m, T+1); zero once either vehicle has passed.
    Arrival times saturate at ttcp_cap (beyond the lookahead they carry no
    extra safety information) and the term fades linearly to zero over the
    last `fade` meters so the pass gate stays continuous."""
    d_i = cp_si[None, :, None] - S[:, cp_i, :]
    d_j = cp_sj[None, :, None] - S[:, cp_j, :]
    t_i = np.minimum(d_i / np.maximum(V[:, cp_i, :], v_eps), ttcp_cap)
    t_j = np.minimum(d_j / np.maximum(V[:, cp_j, :], v_eps), ttcp_cap)
    r = np.abs(t_i - t_j)
    r = r * np.clip(d_i / fade, 0.0, 1.0) * np.clip(d_j / fade, 0.0, 1.0)
    return np.where((d_i > 0.0) & (d_j > 0.0), r, 0.0)


def potential_batch(X, s0, v0, plen, dt, v_max, gamma, wv, wd, wc, v_eps,
                    ttcp_cap, fade, phi, alpha, beta, cp_i, cp_j, cp_si, cp_sj):
    """Weighted system potential of each profile in the batch."""
    B, n, T = X.shape
    S, V = rollout_batch(X, s0, v0, dt, v_max)
    disc = gamma ** np.arange(T + 1)
    rs = _self_reward_terms(X, S, V, plen, wv, wd, wc)
    out = np.einsum("bit,i,t->b", rs, phi * alpha, disc)
    if len(cp_i):
        rg = _pair_reward_terms(S, V, v_eps, ttcp_cap, fade,
                                cp_i, cp_j, cp_si, cp_sj)
        w_pair = 0.25 * (phi[cp_i] + phi[cp_j]) * (beta[cp_i] + beta[cp_j])
        out = out + np.einsum("bpt,p,t->b", rg, w_pair, disc)
    return out


def utility_batch(X, veh, s0, v0, plen, dt, v_max, gamma, wv, wd, wc, v_eps,
                  ttcp_cap, fade, alpha_i, beta_i, cp_i, cp_j, cp_si, cp_sj):
    """Preference-weighted individual utility of one vehicle per profile."""
    B, n, T = X.shape
    S, V = rollout_batch(X, s0, v0, dt, v_max)
    disc = gamma ** np.arange(T + 1)
    rs = _self_reward_terms(X, S, V, plen, wv, wd, wc)
    out = alpha_i * (rs[:, veh, :] @ disc)
    mask = (cp_i == veh) | (cp_j == veh)
    if np.any(mask):
        rg = _pair_reward_terms(S, V, v_eps, ttcp_cap, fade,
                                cp_i[mask], cp_j[mask],
                                cp_si[mask], cp_sj[mask])
        out = out + beta_i * np.einsum("bpt,t->b", rg, disc)
    return out


def _positions_batch(S, pidx, wp_s, wp_x, wp_y):
    """Map arclengths to 2D points through the per-path waypoint tables.
    Past-the-end arclengths extrapolate the final segment."""
    cs = wp_s[pidx]            # (n, W)
    idx = (cs[None, :, None, :] <= S[..., None]).sum(axis=-1) - 1
    idx = np.clip(idx, 0, wp_s.shape[1] - 2)
    lo = np.take_along_axis(cs[None].repeat(S.shape[0], 0), idx, axis=-1)
    hi = np.take_along_axis(cs[None].repeat(S.shape[0], 0), idx + 1, axis=-1)
    frac = (S - lo) / (hi - lo)
    xs, ys = wp_x[pidx], wp_y[pidx]
    x_lo = np.take_along_axis(xs[None].repeat(S.shape[0], 0), idx, axis=-1)
    x_hi = np.take_along_axis(xs[None].repeat(S.shape[0], 0), idx + 1, axis=-1)
    y_lo = np.take_along_axis(ys[None].repeat(S.shape[0], 0), idx, axis=-1)
    y_hi = np.take_along_axis(ys[None].repeat(S.shape[0], 0), idx + 1, axis=-1)
    return x_lo + frac * (x_hi - x_lo), y_lo + frac * (y_hi - y_lo)


def _poses_batch(S, pidx, wp_s, wp_x, wp_y, wp_tx, wp_ty):
    """Positions plus unit tangents at the sampled arclengths."""
    cs = wp_s[pidx]
    idx = (cs[None, :, None, :] <= S[..., None]).sum(axis=-1) - 1
    idx = np.clip(idx, 0, wp_s.shape[1] - 2)
    B = S.shape[0]

    def gather(table, at):
        return np.take_along_axis(table[pidx][None].repeat(B, 0), at, axis=-1)

    lo = gather(wp_s, idx)
    hi = gather(wp_s, idx + 1)
    frac = (S - lo) / (hi - lo)
    x = gather(wp_x, idx)
    x = x + frac * (gather(wp_x, idx + 1) - x)
    y = gather(wp_y, idx)
    y = y + frac * (gather(wp_y, idx + 1) - y)
    return x, y, gather(wp_tx, idx), gather(wp_ty, idx)


def _sat_separation(dx, dy, uxi, uyi, uxj, uyj, hl, hw):
    """Largest signed separation over the four box axes (vectorized);
    negative values mean the footprints overlap by that depth."""
    best = np.full(dx.shape, -np.inf)
    axes = ((uxi, uyi), (-uyi, uxi), (uxj, uyj), (-uyj, uxj))
    for ax, ay in axes:
        span = np.abs(dx * ax + dy * ay)
        proj_i = hl * np.abs(ax * uxi + ay * uyi) + hw * np.abs(-ax * uyi + ay * uxi)
        proj_j = hl * np.abs(ax * uxj + ay * uyj) + hw * np.abs(-ax * uyj + ay * uxj)
        best = np.maximum(best, span - proj_i - proj_j)
    return best


def collision_penalty_batch(X, s0, v0, dt, v_max, d_safe, clearance, hl, hw,
                            t_sep, t_gate, v_eps,
                            cp_i, cp_j, cp_si, cp_sj,
                            mz_i, mz_j, mz_zli, mz_zhi, mz_zlj, mz_zhj,
                            pidx, wp_s, wp_x, wp_y, wp_tx, wp_ty,
                            fp_i, fp_j, f_sign_i, f_off_i, f_sign_j, f_off_j,
                            f_lim, gap_req):
    """Sum of squared violations of the spacing constraints.

    Crossing pairs keep d_safe of planar distance in the conflict's
    immediate vicinity and t_sep of arrival-time separation once the
    earlier vehicle is within the time gate; every pair keeps `clearance`
    of separating-axis footprint distance; shared-lane pairs keep the
    required bumper gap inside their window. Half-step midpoints are
    interleaved with the plan samples so fast vehicles cannot alias
    through a protected zone.
    """
    B, n, T = X.shape
    S, V = rollout_batch(X, s0, v0, dt, v_max)
    total = np.zeros(B)
    Sx = np.empty((B, n, 2 * T))
    Sx[:, :, 0::2] = 0.5 * (S[:, :, :-1] + S[:, :, 1:])
    Sx[:, :, 1::2] = S[:, :, 1:]
    px, py, ptx, pty = _poses_batch(Sx, pidx, wp_s, wp_x, wp_y, wp_tx, wp_ty)
    if len(cp_i):
        dx = px[:, cp_i, :] - px[:, cp_j, :]
        dy = py[:, cp_i, :] - py[:, cp_j, :]
        dist = np.sqrt(dx * dx + dy * dy)
        d_i = cp_si[None, :, None] - Sx[:, cp_i, :]
        d_j = cp_sj[None, :, None] - Sx[:, cp_j, :]
        near = (d_i > 0.0) & (d_j > 0.0) & (d_i <= d_safe) & (d_j <= d_safe)
        c = np.where(near, d_safe - dist, -1.0)
        v = np.maximum(c, 0.0)
        total += np.sum(v * v, axis=(1, 2))
    if len(mz_i):
        # zone time separation: while neither vehicle has cleared a shared
        # crossing or merge zone and one is about to enter it, the later
        # vehicle's entry must trail the earlier one's exit by t_sep
        Se = S[:, :, 1:]
        Ve = V[:, :, 1:]
        v_i = np.maximum(Ve[:, mz_i, :], v_eps)
        v_j = np.maximum(Ve[:, mz_j, :], v_eps)
        exit_i = (mz_zhi[None, :, None] - Se[:, mz_i, :]) / v_i
        exit_j = (mz_zhj[None, :, None] - Se[:, mz_j, :]) / v_j
        enter_i = (mz_zli[None, :, None] - Se[:, mz_i, :]) / v_i
        enter_j = (mz_zlj[None, :, None] - Se[:, mz_j, :]) / v_j
        pet = np.maximum(enter_j - exit_i, enter_i - exit_j)
        act = (exit_i > 0.0) & (exit_j > 0.0) \
            & (np.minimum(enter_i, enter_j) <= t_gate)
        c = np.where(act, t_sep - pet, -1.0)
        v = np.maximum(c, 0.0)
        total += np.sum(v * v, axis=(1, 2))
    if n > 1:
        ii, jj = np.triu_indices(n, k=1)
        sep = _sat_separation(
            px[:, ii, :] - px[:, jj, :], py[:, ii, :] - py[:, jj, :],
            ptx[:, ii, :], pty[:, ii, :], ptx[:, jj, :], pty[:, jj, :],
            hl, hw)
        v = np.maximum(clearance - sep, 0.0)
        total += np.sum(v * v, axis=(1, 2))
    if len(fp_i):
        Se = S[:, :, 1:]
        ci = f_sign_i[None, :, None] * Se[:, fp_i, :] + f_off_i[None, :, None]
        cj = f_sign_j[None, :, None] * Se[:, fp_j, :] + f_off_j[None, :, None]
        act = (ci <= f_lim[None, :, None]) & (cj <= f_lim[None, :, None])
        c = np.where(act, gap_req - np.abs(ci - cj), -1.0)
        v = np.maximum(c, 0.0)
        total += np.sum(v * v, axis=(1, 2))
    return total


def dynamics_penalty_batch(X, v0, dt, v_max):
    """Sum of squared violations of the speed-envelope rows: the unclamped
    speed v[t] + a[t]*dt must lie in [0, v_max]."""
    B, n, T = X.shape
    total = np.zeros(B)
    v = np.broadcast_to(v0, (B, n)).copy()
    for t in range(T):
        v_raw = v + X[:, :, t] * dt
        hi = np.maximum(v_raw - v_max, 0.0)
        lo = np.maximum(-v_raw, 0.0)
        total += np.sum(hi * hi + lo * lo, axis=1)
        v = np.clip(v_raw, 0.0, v_max)
    return total


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
