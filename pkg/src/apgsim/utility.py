"""Self/group rewards, discounted individual utility, and the weighted
system potential.

The potential is built bottom-up from individual utilities so that a
unilateral change of one vehicle's plan moves the system value and that
vehicle's own utility together (exactly proportional when weights are
homogeneous). SceneContext packs a cooperation set into flat arrays for
the evaluation kernels; the public operations here are thin wrappers
around batch-of-one kernel calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .scenario import Scenario, VehicleState

# Extension of the shared-lane follower windows past the geometric
# boundary (m): vehicles that just diverged from a shared entrance, or are
# entering a shared exit, stay followers for this much arclength.
ENTRY_WINDOW_EXT = 8.0
# Half-extent of the ordering zone wrapped around a merge point (m).
MERGE_ZONE_MARGIN = 8.0
# Centerline distance below which two non-crossing, non-merging paths
# still interact; lies between the tight arc-vs-arc sweeps and the lane
# separation of benign parallel traffic.
NEAR_MISS_DIST = 3.2


@dataclass
class RewardWeights:
    """Fixed component weighting inside the self reward."""

    w_speed: float = 2.0
    w_dist: float = 1.0
    w_comfort: float = 0.05
    v_eps: float = 0.1

    def __post_init__(self):
        if min(self.w_speed, self.w_dist, self.w_comfort) < 0 or self.v_eps <= 0:
            raise ValueError("reward weights must be nonnegative and v_eps positive")


@dataclass
class PreferenceState:
    """Per-vehicle preference scalars and system-impact weight."""

    alpha: float = 1.0
    beta: float = 10.0
    phi: float = 1.0


@dataclass
class PredictedTrajectory:
    """Kinematic rollout of one vehicle: arrays over steps t = 0..T.

    The acceleration row mirrors the commanded sequence with a trailing
    zero at t = T (no action is planned for the final state).
    """

    s: np.ndarray
    v: np.ndarray
    a: np.ndarray
    d_cp: dict[str, np.ndarray] = field(default_factory=dict)


def rollout(state: VehicleState, accels, dt_plan: float, v_max: float,
            conflict_s: dict[str, float] | None = None) -> PredictedTrajectory:
    """Roll one vehicle forward under a fixed acceleration sequence."""
    acc = np.asarray(accels, dtype=float)
    X = acc[None, None, :]
    S, V = kernels.rollout_batch(X, np.array([state.s]), np.array([state.v]),
                                 dt_plan, v_max)
    a_row = np.concatenate([acc, [0.0]])
    d_cp = {}
    if conflict_s:
        for label, s_cp in conflict_s.items():
            d_cp[label] = s_cp - S[0, 0]
    return PredictedTrajectory(s=S[0, 0], v=V[0, 0], a=a_row, d_cp=d_cp)


def self_reward(v: float, d_o: float, a: float, w: RewardWeights) -> float:
    """Progress minus remaining distance minus squared-acceleration comfort."""
    return w.w_speed * v - w.w_dist * d_o - w.w_comfort * a * a


def group_reward(d_cp_i: float, v_i: float, d_cp_j: float, v_j: float,
                 v_eps: float) -> float:
    """Gap between the two vehicles' times to the shared conflict point."""
    return abs(d_cp_i / max(v_i, v_eps) - d_cp_j / max(v_j, v_eps))


@dataclass
class SceneContext:
    """A cooperation set flattened into kernel-ready arrays."""

    ids: list[int]
    kinds: list
    s0: np.ndarray
    v0: np.ndarray
    a0: np.ndarray
    plen: np.ndarray
    pidx: np.ndarray
    phi: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    cp_i: np.ndarray
    cp_j: np.ndarray
    cp_si: np.ndarray
    cp_sj: np.ndarray
    mz_i: np.ndarray
    mz_j: np.ndarray
    mz_zli: np.ndarray
    mz_zhi: np.ndarray
    mz_zlj: np.ndarray
    mz_zhj: np.ndarray
    fp_i: np.ndarray
    fp_j: np.ndarray
    f_sign_i: np.ndarray
    f_off_i: np.ndarray
    f_sign_j: np.ndarray
    f_off_j: np.ndarray
    f_lim: np.ndarray
    wp_s: np.ndarray
    wp_x: np.ndarray
    wp_y: np.ndarray
    wp_tx: np.ndarray
    wp_ty: np.ndarray
    dt: float
    v_max: float
    gamma: float
    horizon: int
    weights: RewardWeights
    d_safe: float
    clearance: float
    t_sep: float
    gap_req: float
    veh_len: float
    half_len: float
    half_wid: float
    ttcp_cap: float
    pair_fade: float

    @property
    def n(self) -> int:
        return len(self.ids)

    def row_of(self, vehicle_id: int) -> int | None:
        try:
            return self.ids.index(vehicle_id)
        except ValueError:
            return None

    def potential(self, profiles: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(profiles, dtype=float)
        squeeze = X.ndim == 2
        if squeeze:
            X = X[None]
        out = kernels.potential_batch(
            X, self.s0, self.v0, self.plen, self.dt, self.v_max, self.gamma,
            self.weights.w_speed, self.weights.w_dist, self.weights.w_comfort,
            self.weights.v_eps, self.ttcp_cap, self.pair_fade,
            self.phi, self.alpha, self.beta,
            self.cp_i, self.cp_j, self.cp_si, self.cp_sj)
        return out[0] if squeeze else out

    def utility(self, row: int, profiles: np.ndarray,
                alpha: float | None = None, beta: float | None = None) -> np.ndarray:
        X = np.ascontiguousarray(profiles, dtype=float)
        squeeze = X.ndim == 2
        if squeeze:
            X = X[None]
        out = kernels.utility_batch(
            X, row, self.s0, self.v0, self.plen, self.dt, self.v_max, self.gamma,
            self.weights.w_speed, self.weights.w_dist, self.weights.w_comfort,
            self.weights.v_eps, self.ttcp_cap, self.pair_fade,
            self.alpha[row] if alpha is None else alpha,
            self.beta[row] if beta is None else beta,
            self.cp_i, self.cp_j, self.cp_si, self.cp_sj)
        return out[0] if squeeze else out

    def collision_penalty(self, profiles: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(profiles, dtype=float)
        squeeze = X.ndim == 2
        if squeeze:
            X = X[None]
        out = kernels.collision_penalty_batch(
            X, self.s0, self.v0, self.dt, self.v_max, self.d_safe,
            self.clearance, self.half_len, self.half_wid,
            self.t_sep, self.ttcp_cap, self.weights.v_eps,
            self.cp_i, self.cp_j, self.cp_si, self.cp_sj,
            self.mz_i, self.mz_j,
            self.mz_zli, self.mz_zhi, self.mz_zlj, self.mz_zhj,
            self.pidx, self.wp_s, self.wp_x, self.wp_y, self.wp_tx, self.wp_ty,
            self.fp_i, self.fp_j, self.f_sign_i, self.f_off_i,
            self.f_sign_j, self.f_off_j, self.f_lim, self.gap_req)
        return out[0] if squeeze else out

    def dynamics_penalty(self, profiles: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(profiles, dtype=float)
        squeeze = X.ndim == 2
        if squeeze:
            X = X[None]
        out = kernels.dynamics_penalty_batch(X, self.v0, self.dt, self.v_max)
        return out[0] if squeeze else out

    def danger(self, profiles: np.ndarray) -> np.ndarray:
        """Physical-danger score of a plan: literal predicted footprint
        overlap and sub-length lane gaps. The soft spacing shaping (d_safe,
        clearance margin, t_sep) is excluded."""
        X = np.ascontiguousarray(profiles, dtype=float)
        squeeze = X.ndim == 2
        if squeeze:
            X = X[None]
        out = kernels.collision_penalty_batch(
            X, self.s0, self.v0, self.dt, self.v_max, 0.0,
            0.0, self.half_len, self.half_wid,
            0.0, -1e18, self.weights.v_eps,
            self.cp_i, self.cp_j, self.cp_si, self.cp_sj,
            self.mz_i, self.mz_j,
            self.mz_zli, self.mz_zhi, self.mz_zlj, self.mz_zhj,
            self.pidx, self.wp_s, self.wp_x, self.wp_y, self.wp_tx, self.wp_ty,
            self.fp_i, self.fp_j, self.f_sign_i, self.f_off_i,
            self.f_sign_j, self.f_off_j, self.f_lim, self.veh_len)
        return out[0] if squeeze else out

    def danger_members(self, profile: np.ndarray) -> set:
        """Rows involved in a literal predicted overlap along one plan:
        footprint intersection or a same-lane gap below a vehicle length."""
        from .kernels import backend_numpy as _np_impl
        X = np.ascontiguousarray(profile, dtype=float)[None]
        S, _ = _np_impl.rollout_batch(X, self.s0, self.v0, self.dt, self.v_max)
        n = self.n
        T = X.shape[2]
        Sx = np.empty((1, n, 2 * T))
        Sx[:, :, 0::2] = 0.5 * (S[:, :, :-1] + S[:, :, 1:])
        Sx[:, :, 1::2] = S[:, :, 1:]
        px, py, ptx, pty = _np_impl._poses_batch(
            Sx, self.pidx, self.wp_s, self.wp_x, self.wp_y,
            self.wp_tx, self.wp_ty)
        involved = set()
        ii, jj = np.triu_indices(n, k=1)
        if len(ii):
            sep = _np_impl._sat_separation(
                px[:, ii, :] - px[:, jj, :], py[:, ii, :] - py[:, jj, :],
                ptx[:, ii, :], pty[:, ii, :], ptx[:, jj, :], pty[:, jj, :],
                self.half_len, self.half_wid)
            bad = np.any(sep < 0.0, axis=-1)[0]
            for k in np.nonzero(bad)[0]:
                involved.add(int(ii[k]))
                involved.add(int(jj[k]))
        Se = S[:, :, 1:]
        for p in range(len(self.fp_i)):
            i, j = int(self.fp_i[p]), int(self.fp_j[p])
            ci = self.f_sign_i[p] * Se[0, i] + self.f_off_i[p]
            cj = self.f_sign_j[p] * Se[0, j] + self.f_off_j[p]
            act = (ci <= self.f_lim[p]) & (cj <= self.f_lim[p])
            if np.any(act & (np.abs(ci - cj) < self.veh_len)):
                involved.add(i)
                involved.add(j)
        return involved

    def penalized(self, profiles: np.ndarray, lam: float, mu_pen: float) -> np.ndarray:
        """Fused minimization objective: -potential + weighted penalties."""
        X = np.ascontiguousarray(profiles, dtype=float)
        squeeze = X.ndim == 2
        if squeeze:
            X = X[None]
        w = self.weights
        out = kernels.penalized_batch(
            X, self.s0, self.v0, self.plen, self.dt, self.v_max, self.gamma,
            w.w_speed, w.w_dist, w.w_comfort, w.v_eps, self.ttcp_cap,
            self.pair_fade, self.phi, self.alpha, self.beta,
            self.cp_i, self.cp_j, self.cp_si, self.cp_sj,
            self.mz_i, self.mz_j,
            self.mz_zli, self.mz_zhi, self.mz_zlj, self.mz_zhj,
            self.d_safe, self.clearance, self.half_len, self.half_wid,
            self.t_sep, self.ttcp_cap,
            self.pidx, self.wp_s, self.wp_x, self.wp_y, self.wp_tx, self.wp_ty,
            self.fp_i, self.fp_j, self.f_sign_i, self.f_off_i,
            self.f_sign_j, self.f_off_j, self.f_lim, self.gap_req,
            lam, mu_pen)
        return out[0] if squeeze else out

    def reward_sums(self, profile: np.ndarray):
        """Unweighted discounted reward sums at one profile: the additive
        game behind the impact weights. Returns (u_self, pair_sums) with
        pair_sums as {(row_i, row_j): discounted pair reward}."""
        X = np.ascontiguousarray(profile, dtype=float)[None]
        S, V = kernels.rollout_batch(X, self.s0, self.v0, self.dt, self.v_max)
        T = X.shape[2]
        disc = self.gamma ** np.arange(T + 1)
        A = np.zeros((1, self.n, T + 1))
        A[:, :, :T] = X
        d_o = np.maximum(self.plen[None, :, None] - S, 0.0)
        rs = (self.weights.w_speed * V - self.weights.w_dist * d_o
              - self.weights.w_comfort * A * A)
        u_self = rs[0] @ disc
        pair_sums = {}
        for p in range(len(self.cp_i)):
            i, j = int(self.cp_i[p]), int(self.cp_j[p])
            d_i = self.cp_si[p] - S[0, i]
            d_j = self.cp_sj[p] - S[0, j]
            t_i = np.minimum(d_i / np.maximum(V[0, i], self.weights.v_eps),
                             self.ttcp_cap)
            t_j = np.minimum(d_j / np.maximum(V[0, j], self.weights.v_eps),
                             self.ttcp_cap)
            rg = np.abs(t_i - t_j) \
                * np.clip(d_i / self.pair_fade, 0.0, 1.0) \
                * np.clip(d_j / self.pair_fade, 0.0, 1.0)
            rg = np.where((d_i > 0) & (d_j > 0), rg, 0.0)
            pair_sums[(i, j)] = float(rg @ disc)
        return u_self, pair_sums


def path_tables(scenario: Scenario):
    """Padded per-path waypoint and segment-tangent tables shared by every
    kernel call."""
    n_paths = len(scenario.paths)
    W = max(len(p.waypoints) for p in scenario.paths)
    wp_s = np.full((n_paths, W), 1e18)
    wp_x = np.zeros((n_paths, W))
    wp_y = np.zeros((n_paths, W))
    wp_tx = np.zeros((n_paths, W))
    wp_ty = np.zeros((n_paths, W))
    for k, p in enumerate(scenario.paths):
        w = len(p.waypoints)
        wp_s[k, :w] = p.cum_s
        wp_x[k, :w] = p.waypoints[:, 0]
        wp_y[k, :w] = p.waypoints[:, 1]
        # pad with the final point so clipped lookups stay on the path
        wp_x[k, w:] = p.waypoints[-1, 0]
        wp_y[k, w:] = p.waypoints[-1, 1]
        seg = np.diff(p.waypoints, axis=0)
        seg /= np.linalg.norm(seg, axis=1, keepdims=True)
        wp_tx[k, :w - 1] = seg[:, 0]
        wp_ty[k, :w - 1] = seg[:, 1]
        wp_tx[k, w - 1:] = seg[-1, 0]
        wp_ty[k, w - 1:] = seg[-1, 1]
    return wp_s, wp_x, wp_y, wp_tx, wp_ty


def build_context(states: list[VehicleState], prefs, scenario: Scenario,
                  cfg, tables=None) -> SceneContext:
    """Flatten a cooperation set into a SceneContext.

    prefs maps vehicle id -> PreferenceState. Pair structure: crossing
    paths become conflict pairs; a shared entrance lane, shared exit
    lane, or identical path becomes a follower pair with the matching
    activity window.
    """
    if tables is None:
        tables = path_tables(scenario)
    wp_s, wp_x, wp_y, wp_tx, wp_ty = tables
    path_index = {p.id: k for k, p in enumerate(scenario.paths)}
    n = len(states)
    s0 = np.array([v.s for v in states], dtype=float)
    v0 = np.array([v.v for v in states], dtype=float)
    a0 = np.array([v.a for v in states], dtype=float)
    paths = [scenario.path(v.path_id) for v in states]
    plen = np.array([p.total_length for p in paths])
    pidx = np.array([path_index[v.path_id] for v in states], dtype=np.int64)
    phi = np.array([prefs[v.id].phi for v in states])
    alpha = np.array([prefs[v.id].alpha for v in states])
    beta = np.array([prefs[v.id].beta for v in states])

    zone_margin = cfg.zone_radius + 0.5 * cfg.vehicle_length
    cp_i, cp_j, cp_si, cp_sj = [], [], [], []
    mz_i, mz_j, zli, zhi, zlj, zhj = [], [], [], [], [], []
    fp_i, fp_j, fsi, foi, fsj, foj, flim = [], [], [], [], [], [], []
    for i in range(n):
        for j in range(i + 1, n):
            pa, pb = paths[i], paths[j]
            if pa.id == pb.id:
                fp_i.append(i); fp_j.append(j)
                fsi.append(1.0); foi.append(0.0)
                fsj.append(1.0); foj.append(0.0)
                flim.append(math.inf)
                continue
            if pa.entry_arm == pb.entry_arm:
                fp_i.append(i); fp_j.append(j)
                fsi.append(1.0); foi.append(0.0)
                fsj.append(1.0); foj.append(0.0)
                flim.append(pa.stop_line_s + ENTRY_WINDOW_EXT)
            elif pa.exit_arm == pb.exit_arm:
                # followers on the shared tail; ordered through the merge
                # throat by a time-separation zone like a crossing
                exit_len_a = pa.total_length - _merge_s(pa)
                fp_i.append(i); fp_j.append(j)
                fsi.append(-1.0); foi.append(pa.total_length)
                fsj.append(-1.0); foj.append(pb.total_length)
                flim.append(exit_len_a + ENTRY_WINDOW_EXT)
                mz_i.append(i); mz_j.append(j)
                zli.append(_merge_s(pa) - MERGE_ZONE_MARGIN)
                zhi.append(_merge_s(pa) + MERGE_ZONE_MARGIN)
                zlj.append(_merge_s(pb) - MERGE_ZONE_MARGIN)
                zhj.append(_merge_s(pb) + MERGE_ZONE_MARGIN)
            cp = scenario.conflict_between(pa.id, pb.id)
            if cp is not None:
                zone = scenario.crossing_zone(pa.id, pb.id, zone_margin)
                cp_i.append(i); cp_j.append(j)
                cp_si.append(cp.s_a); cp_sj.append(cp.s_b)
                mz_i.append(i); mz_j.append(j)
                zli.append(zone[0]); zhi.append(zone[1])
                zlj.append(zone[2]); zhj.append(zone[3])
            elif pa.entry_arm != pb.entry_arm and pa.exit_arm != pb.exit_arm:
                zone = scenario.proximity_zone(pa.id, pb.id, NEAR_MISS_DIST,
                                               zone_margin)
                if zone is not None:
                    mz_i.append(i); mz_j.append(j)
                    zli.append(zone[0]); zhi.append(zone[1])
                    zlj.append(zone[2]); zhj.append(zone[3])

    return SceneContext(
        ids=[v.id for v in states],
        kinds=[v.kind for v in states],
        s0=s0, v0=v0, a0=a0, plen=plen, pidx=pidx,
        phi=phi, alpha=alpha, beta=beta,
        cp_i=np.array(cp_i, dtype=np.int64), cp_j=np.array(cp_j, dtype=np.int64),
        cp_si=np.array(cp_si), cp_sj=np.array(cp_sj),
        mz_i=np.array(mz_i, dtype=np.int64), mz_j=np.array(mz_j, dtype=np.int64),
        mz_zli=np.array(zli), mz_zhi=np.array(zhi),
        mz_zlj=np.array(zlj), mz_zhj=np.array(zhj),
        fp_i=np.array(fp_i, dtype=np.int64), fp_j=np.array(fp_j, dtype=np.int64),
        f_sign_i=np.array(fsi), f_off_i=np.array(foi),
        f_sign_j=np.array(fsj), f_off_j=np.array(foj),
        f_lim=np.array(flim),
        wp_s=wp_s, wp_x=wp_x, wp_y=wp_y, wp_tx=wp_tx, wp_ty=wp_ty,
        dt=cfg.dt_plan, v_max=cfg.v_max, gamma=cfg.gamma, horizon=cfg.horizon,
        weights=RewardWeights(cfg.w_speed, cfg.w_dist, cfg.w_comfort, cfg.v_eps),
        d_safe=cfg.d_safe, clearance=cfg.clearance, t_sep=cfg.t_sep,
        gap_req=cfg.vehicle_length + cfg.follow_gap,
        veh_len=cfg.vehicle_length,
        half_len=0.5 * cfg.vehicle_length, half_wid=0.5 * cfg.vehicle_width,
        ttcp_cap=cfg.ttcp_cap, pair_fade=cfg.pair_fade)


def _merge_s(path) -> float:
    """Arclength where the exit lane segment begins (second-to-last waypoint)."""
    return float(path.cum_s[-2])


def individual_utility(i: int, profile: np.ndarray, states, prefs,
                       scenario: Scenario, cfg) -> float:
    """Discounted preference-weighted utility of vehicle i under a joint plan."""
    ctx = build_context(states, prefs, scenario, cfg)
    return float(ctx.utility(i, profile))


def system_potential(profile: np.ndarray, states, prefs,
                     scenario: Scenario, cfg) -> float:
    """Weighted potential over the whole cooperation set."""
    ctx = build_context(states, prefs, scenario, cfg)
    return float(ctx.potential(profile))
