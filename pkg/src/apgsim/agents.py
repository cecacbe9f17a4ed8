"""Simulated human drivers and the autonomous executor.

HDVs best-respond with their true preferences over six candidate
accelerations, predicting everyone else at constant velocity; candidates
that would close out the following gap to a same-lane leader are
discarded first. CAVs execute the first step of the solved plan.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .utility import SceneContext, build_context

DEFAULT_ACTIONS = (-4.0, -2.0, -1.0, 0.0, 1.0, 2.0)

# (true_alpha, true_beta) presets; chosen so mean chosen acceleration orders
# aggressive >= normal >= conservative under the preference bounds.
ARCHETYPE_PRESETS = {
    "aggressive": (1.5, 4.0),
    "normal": (1.0, 10.0),
    "conservative": (0.6, 18.0),
}
ARCHETYPE_MIX = (("aggressive", 0.25), ("normal", 0.5), ("conservative", 0.25))

# Bumper-to-bumper floor an HDV keeps to its leader under a constant-velocity
# prediction before a candidate action is ruled out.
FOLLOW_FLOOR = 1.0
# Smallest zone time gap an HDV accepts when entering a crossing conflict
# against a constant-velocity prediction of the other vehicle.
GAP_FLOOR = 1.5


@dataclass(frozen=True)
class ActionSet:
    accels: tuple[float, ...] = DEFAULT_ACTIONS

    def __post_init__(self):
        if len(self.accels) != 6:
            raise ValueError("the candidate set carries exactly six actions")
        if tuple(sorted(self.accels)) != tuple(self.accels):
            raise ValueError("candidate actions must be sorted ascending")


@dataclass(frozen=True)
class HdvProfile:
    archetype: str
    true_alpha: float
    true_beta: float

    @classmethod
    def preset(cls, archetype: str) -> "HdvProfile":
        a, b = ARCHETYPE_PRESETS[archetype]
        return cls(archetype, a, b)


def draw_archetype(rng: np.random.Generator, mix=ARCHETYPE_MIX) -> str:
    u = float(rng.random())
    acc = 0.0
    for name, p in mix:
        acc += p
        if u < acc:
            return name
    return mix[-1][0]


def _leader_gap(ctx: SceneContext, row: int):
    """Nearest same-lane vehicle ahead of `row` inside an active window.
    Returns (leader_row, bumper_gap, leader_speed) or None."""
    best = None
    for p in range(len(ctx.fp_i)):
        i, j = int(ctx.fp_i[p]), int(ctx.fp_j[p])
        if row not in (i, j):
            continue
        other = j if row == i else i
        c_self = (ctx.f_sign_i[p] if row == i else ctx.f_sign_j[p]) * ctx.s0[row] \
            + (ctx.f_off_i[p] if row == i else ctx.f_off_j[p])
        c_other = (ctx.f_sign_j[p] if row == i else ctx.f_sign_i[p]) * ctx.s0[other] \
            + (ctx.f_off_j[p] if row == i else ctx.f_off_i[p])
        if c_self > ctx.f_lim[p] or c_other > ctx.f_lim[p]:
            continue
        sign = ctx.f_sign_i[p]
        ahead = c_other > c_self if sign > 0 else c_other < c_self
        if not ahead:
            continue
        gap = abs(c_other - c_self)
        if best is None or gap < best[1]:
            best = (other, gap, float(ctx.v0[other]),
                    min(float(ctx.a0[other]), 0.0))
    return best


def _candidate_safe(ctx: SceneContext, row: int, accel: float, leader) -> bool:
    """Hold the candidate over the horizon; the leader keeps its speed.
    Safe when the bumper gap never drops below the floor."""
    if leader is None:
        return True
    _, gap0, v_lead, a_lead = leader
    v = float(ctx.v0[row])
    s_self = 0.0
    s_lead = 0.0
    floor = ctx.veh_len + FOLLOW_FLOOR
    for _ in range(ctx.horizon):
        v_next = min(max(v + accel * ctx.dt, 0.0), ctx.v_max)
        a_eff = (v_next - v) / ctx.dt
        s_self += v * ctx.dt + 0.5 * a_eff * ctx.dt ** 2
        v = v_next
        vl_next = max(v_lead + a_lead * ctx.dt, 0.0)
        al_eff = (vl_next - v_lead) / ctx.dt
        s_lead += v_lead * ctx.dt + 0.5 * al_eff * ctx.dt ** 2
        v_lead = vl_next
        if gap0 + s_lead - s_self < floor:
            return False
    return True


def _zone_times(s0, v0, accel, z_lo, z_hi, dt, v_max, horizon):
    """(entry, exit) times into an arclength zone under a held acceleration,
    linearly interpolated between plan samples; times beyond the rollout
    extrapolate at the final speed."""
    times = [0.0]
    ss = [s0]
    v = v0
    s = s0
    for t in range(horizon):
        v_next = min(max(v + accel * dt, 0.0), v_max)
        a_eff = (v_next - v) / dt
        s = s + v * dt + 0.5 * a_eff * dt * dt
        v = v_next
        times.append((t + 1) * dt)
        ss.append(s)

    def hit(target):
        if ss[0] >= target:
            return 0.0
        for k in range(1, len(ss)):
            if ss[k] >= target:
                frac = (target - ss[k - 1]) / (ss[k] - ss[k - 1])
                return times[k - 1] + frac * dt
        tail_v = max(v, 0.05)
        return times[-1] + (target - ss[-1]) / tail_v

    return hit(z_lo), hit(z_hi)


def _crossing_safe(ctx: SceneContext, row: int, accel: float) -> bool:
    """Gap acceptance at crossing and merge zones: under a
    constant-velocity prediction of the other vehicle, entering a shared
    zone is accepted only when the predicted occupancy gap stays above
    the floor."""
    for p in range(len(ctx.mz_i)):
        i, j = int(ctx.mz_i[p]), int(ctx.mz_j[p])
        if row == i:
            other = j
            z_lo_s, z_hi_s = ctx.mz_zli[p], ctx.mz_zhi[p]
            z_lo_o, z_hi_o = ctx.mz_zlj[p], ctx.mz_zhj[p]
        elif row == j:
            other = i
            z_lo_s, z_hi_s = ctx.mz_zlj[p], ctx.mz_zhj[p]
            z_lo_o, z_hi_o = ctx.mz_zli[p], ctx.mz_zhi[p]
        else:
            continue
        if ctx.s0[row] >= z_hi_s or ctx.s0[other] >= z_hi_o:
            continue
        v_o = max(float(ctx.v0[other]), 0.05)
        enter_o = (z_lo_o - ctx.s0[other]) / v_o
        exit_o = (z_hi_o - ctx.s0[other]) / v_o
        horizon_s = ctx.horizon * ctx.dt
        if enter_o > 2.0 * horizon_s:
            continue
        enter_s, exit_s = _zone_times(
            float(ctx.s0[row]), float(ctx.v0[row]), accel,
            float(z_lo_s), float(z_hi_s), ctx.dt, ctx.v_max, ctx.horizon)
        if enter_s > 2.0 * horizon_s:
            continue
        gap = max(enter_o - exit_s, enter_s - exit_o)
        if gap < GAP_FLOOR:
            return False
    return True


def hdv_decide_ctx(ctx: SceneContext, row: int, profile: HdvProfile,
                   action_set: ActionSet = ActionSet()) -> float:
    """Utility-best candidate action for one HDV against constant-velocity
    predictions, ties toward the smaller magnitude."""
    n, T = ctx.n, ctx.horizon
    actions = action_set.accels
    X = np.zeros((len(actions), n, T))
    for k, a in enumerate(actions):
        X[k, row, :] = a
    utils = ctx.utility(row, X, alpha=profile.true_alpha, beta=profile.true_beta)
    leader = _leader_gap(ctx, row)
    order = sorted(range(len(actions)), key=lambda k: (abs(actions[k]), actions[k]))
    best_k = None
    for k in order:
        if not _candidate_safe(ctx, row, actions[k], leader):
            continue
        if not _crossing_safe(ctx, row, actions[k]):
            continue
        if best_k is None or utils[k] > utils[best_k]:
            best_k = k
    if best_k is None:
        return actions[0]
    return float(actions[best_k])


def hdv_decide(self_state, other_states, profile: HdvProfile, scenario, cfg,
               prefs=None, action_set: ActionSet = ActionSet()) -> float:
    """Public entry: builds the evaluation context around the deciding
    vehicle (row 0) and best-responds."""
    from .utility import PreferenceState
    states = [self_state] + list(other_states)
    if prefs is None:
        prefs = {v.id: PreferenceState() for v in states}
    ctx = build_context(states, prefs, scenario, cfg)
    return hdv_decide_ctx(ctx, 0, profile, action_set)


def cav_apply(vehicle_id: int, profile_ids: list[int],
              solved_profile: np.ndarray) -> float:
    """First planned acceleration of the vehicle's row; a missing row falls
    back to comfortable braking."""
    try:
        row = profile_ids.index(vehicle_id)
    except ValueError:
        return -2.0
    return float(solved_profile[row, 0])


def track_speed_accel(v: float, v_desired: float, a_min: float, a_max: float,
                      gain: float = 1.0) -> float:
    """Proportional speed tracking used outside the cooperation set."""
    return float(np.clip(gain * (v_desired - v), a_min, a_max))
