"""Per-trial simulation loop: membership, solve, act, adapt, integrate, log.

Each 0.1 s control step re-solves the cooperative plan over the current
set, lets CAVs execute the first planned acceleration while HDVs follow
their own preferences, compares estimated with observed HDV actions to
refine the preference estimates, recomputes the impact weights, and
integrates the kinematics. Vehicles that have passed their path end stay
in the evaluation as frozen rows (their plan pinned to speed tracking) so
followers keep spacing constraints against them, but they are no longer
cooperation members: their weight drops to the normalization floor and
they contribute no pair rewards.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import agents, preference, shapley, solver
from .config import ScenarioConfig
from .scenario import (Scenario, VehicleKind, VehicleState, build_intersection,
                       heading_on_path, position_with_overrun, spawn_vehicles)
from .utility import PreferenceState, SceneContext, build_context, path_tables

REMOVAL_OVERRUN = 10.0
FALLBACK_BRAKE = -2.0
# Steps between full-budget ordering re-starts of the solve (on top of
# membership changes).
RESTART_PERIOD = 50


@dataclass
class SolverDiag:
    iterations: int = 0
    residual: float = 0.0
    status: str = "idle"
    failed: bool = False
    fallback: bool = False


@dataclass
class StepRecord:
    time: float
    vehicles: list
    phi: dict
    alpha: dict
    beta: dict
    solver: SolverDiag
    bp: list = field(default_factory=list)


@dataclass
class TrialLog:
    seed: int
    penetration: float
    config_digest: str
    kinds: dict
    paths: dict
    archetypes: dict
    spawn_s: dict
    spawn_v: dict
    path_length: dict
    records: list = field(default_factory=list)
    status: str = "running"
    collision_pair: tuple | None = None
    end_time: float = 0.0
    exit_times: dict = field(default_factory=dict)
    solver_failures: int = 0


@dataclass
class WorldState:
    time: float
    vehicles: list
    prefs: dict
    hdv_profiles: dict
    coop_ids: list = field(default_factory=list)
    last_ids: list | None = None
    last_profile: np.ndarray | None = None
    exited: dict = field(default_factory=dict)
    observed_accel: dict = field(default_factory=dict)
    prev_ctx: SceneContext | None = None
    prev_ids: list | None = None
    prev_profile: np.ndarray | None = None
    step_index: int = 0
    _members_key: tuple = ()


def _obb_overlap(c1, th1, c2, th2, half_len, half_w) -> bool:
    """Separating-axis test for two equally sized oriented rectangles."""
    axes = []
    for th in (th1, th2):
        axes.append((math.cos(th), math.sin(th)))
        axes.append((-math.sin(th), math.cos(th)))
    dx, dy = c2[0] - c1[0], c2[1] - c1[1]
    u1 = (math.cos(th1), math.sin(th1))
    w1 = (-math.sin(th1), math.cos(th1))
    u2 = (math.cos(th2), math.sin(th2))
    w2 = (-math.sin(th2), math.cos(th2))
    for ax in axes:
        proj1 = half_len * abs(ax[0] * u1[0] + ax[1] * u1[1]) \
            + half_w * abs(ax[0] * w1[0] + ax[1] * w1[1])
        proj2 = half_len * abs(ax[0] * u2[0] + ax[1] * u2[1]) \
            + half_w * abs(ax[0] * w2[0] + ax[1] * w2[1])
        if abs(ax[0] * dx + ax[1] * dy) > proj1 + proj2:
            return False
    return True


def detect_collision(vehicles, scenario: Scenario):
    """First pair (by index order) of overlapping vehicle footprints."""
    info = []
    for v in vehicles:
        path = scenario.path(v.path_id)
        pos = position_with_overrun(path, v.s)
        th = heading_on_path(path, min(v.s, path.total_length))
        info.append((pos, th, v))
    for i in range(len(info)):
        for j in range(i + 1, len(info)):
            (p1, t1, v1), (p2, t2, v2) = info[i], info[j]
            if abs(p1[0] - p2[0]) + abs(p1[1] - p2[1]) > 2.0 * v1.length + 4.0:
                continue
            if _obb_overlap(p1, t1, p2, t2, 0.5 * v1.length, 0.5 * v1.width):
                return (v1.id, v2.id)
    return None


def _coop_members(world: WorldState, scenario: Scenario) -> tuple[list, list]:
    """Cooperating vehicles (inside the radius, not exited) and frozen
    obstacle rows (everyone else still alive)."""
    members, frozen = [], []
    cx, cy = scenario.center
    for v in world.vehicles:
        path = scenario.path(v.path_id)
        pos = position_with_overrun(path, v.s)
        inside = (pos[0] - cx) ** 2 + (pos[1] - cy) ** 2 <= scenario.coop_radius ** 2
        if inside and v.s < path.total_length:
            members.append(v)
        else:
            frozen.append(v)
    return members, frozen


def _warm_start(ctx: SceneContext, world: WorldState, frozen_accel: dict) -> np.ndarray:
    x0 = np.zeros((ctx.n, ctx.horizon))
    if world.last_profile is not None and world.last_ids:
        for row, vid in enumerate(ctx.ids):
            try:
                prev = world.last_ids.index(vid)
            except ValueError:
                continue
            x0[row, :] = world.last_profile[prev, :]
    for row, vid in enumerate(ctx.ids):
        if vid in frozen_accel:
            x0[row, :] = frozen_accel[vid]
    return x0


def step(world: WorldState, scenario: Scenario, cfg: ScenarioConfig,
         log: TrialLog, tables=None) -> WorldState:
    """Advance the world by one control interval, appending a log record."""
    if tables is None:
        tables = path_tables(scenario)
    members, frozen = _coop_members(world, scenario)
    ordered = members + frozen
    member_ids = [v.id for v in members]
    n_members = len(members)

    frozen_accel = {
        v.id: agents.track_speed_accel(v.v, cfg.v_desired, cfg.a_min, cfg.a_max)
        for v in frozen}

    diag = SolverDiag()
    profile = None
    ctx = None
    if members:
        ctx = build_context(ordered, world.prefs, scenario, cfg, tables)
        x0 = _warm_start(ctx, world, frozen_accel)
        members_key = tuple(member_ids)
        extra = (world.step_index % RESTART_PERIOD == 0
                 or members_key != world._members_key)
        world._members_key = members_key
        pinned = {ctx.ids.index(vid): acc for vid, acc in frozen_accel.items()}
        opts = solver.SolverOptions(
            max_iterations=cfg.solver_max_iterations if extra
            else cfg.solver_warm_iterations,
            tolerance=cfg.solver_tolerance, lam=cfg.solver_lambda,
            mu_pen=cfg.solver_mu, rho=cfg.solver_rho, c1=cfg.solver_c1,
            fd_step=cfg.solver_fd_step)
        try:
            result = solver.solve_cooperative(ctx, x0, cfg, opts=opts,
                                              extra_starts=extra,
                                              pinned=pinned)
            if np.all(np.isfinite(result.profile)):
                profile = result.profile
                diag = SolverDiag(result.iterations, result.residual,
                                  result.status, False, result.fallback)
            else:
                diag = SolverDiag(0, math.inf, "failed", True, True)
        except Exception:
            diag = SolverDiag(0, math.inf, "failed", True, True)
        if diag.failed or diag.fallback:
            log.solver_failures += 1

    # choose actions; a braking fallback only binds the vehicles that are
    # actually part of the predicted overlap
    endangered = set()
    if profile is not None and diag.fallback and ctx is not None:
        endangered = ctx.danger_members(profile)
    actions = {}
    for v in world.vehicles:
        if v.id not in member_ids:
            actions[v.id] = _guarded_track(ctx, v, frozen_accel[v.id],
                                           cfg.a_min) \
                if ctx is not None else frozen_accel.get(
                    v.id, agents.track_speed_accel(v.v, cfg.v_desired,
                                                   cfg.a_min, cfg.a_max))
            continue
        row = member_ids.index(v.id)
        if v.kind == VehicleKind.CAV:
            if profile is None:
                actions[v.id] = _guarded_track(ctx, v, FALLBACK_BRAKE,
                                               cfg.a_min)
            elif diag.fallback and ctx.ids.index(v.id) in endangered:
                actions[v.id] = _guarded_track(ctx, v, FALLBACK_BRAKE,
                                               cfg.a_min)
            else:
                actions[v.id] = agents.cav_apply(v.id, ctx.ids, profile)
        else:
            actions[v.id] = agents.hdv_decide_ctx(
                ctx, row, world.hdv_profiles[v.id])

    # preference adaptation from the previous step's solve
    bp_records = []
    if not cfg.no_bp and world.prev_ctx is not None:
        for v in members:
            if v.kind != VehicleKind.HDV or v.id not in world.observed_accel:
                continue
            est = preference.estimated_action_for(
                v.id, world.prev_ids, world.prev_profile)
            if est is None:
                continue
            prev_row = world.prev_ctx.row_of(v.id)
            if prev_row is None:
                continue
            pref = world.prefs[v.id]
            rec = preference.bp_update(
                (pref.alpha, pref.beta), est, world.observed_accel[v.id],
                world.prev_ctx, prev_row, world.prev_profile, cfg,
                cfg.learning_rate, step=world.step_index, vehicle_id=v.id)
            pref.alpha = rec.alpha_after
            pref.beta = rec.beta_after
            bp_records.append(rec)

    # impact weights from the freshly solved profile
    if not cfg.no_shapley and members and profile is not None:
        u_self, pair_sums = ctx.reward_sums(profile)
        member_pairs = {k: v for k, v in pair_sums.items()
                        if k[0] < n_members and k[1] < n_members}
        batches = shapley.coarsen_batches(
            members, scenario, cfg.headway_threshold, cfg.max_batch)
        raw = shapley.coarsened_values(
            np.asarray(u_self[:n_members]), member_pairs, batches)
        phis, floor = shapley.normalize_with_floor(raw)
        for k, v in enumerate(members):
            world.prefs[v.id].phi = float(phis[k])
        for v in frozen:
            world.prefs[v.id].phi = float(floor)

    # integrate kinematics over the control interval
    dt = cfg.dt_ctrl
    removed = []
    for v in world.vehicles:
        a = float(np.clip(actions[v.id], cfg.a_min, cfg.a_max))
        v_next = float(np.clip(v.v + a * dt, 0.0, cfg.v_max))
        a_eff = (v_next - v.v) / dt
        s_next = v.s + v.v * dt + 0.5 * a_eff * dt * dt
        plen = scenario.path(v.path_id).total_length
        if v.id not in world.exited and s_next >= plen:
            frac = (plen - v.s) / (s_next - v.s) if s_next > v.s else 1.0
            world.exited[v.id] = world.time + frac * dt
        v.s, v.v, v.a = s_next, v_next, a
        world.observed_accel[v.id] = a_eff
        if s_next >= plen + REMOVAL_OVERRUN:
            removed.append(v.id)
    world.vehicles = [v for v in world.vehicles if v.id not in removed]
    world.time = round((world.step_index + 1) * dt, 9)
    world.step_index += 1
    world.coop_ids = member_ids
    world.prev_ctx = ctx
    world.prev_ids = list(ctx.ids) if ctx is not None else None
    world.prev_profile = profile
    if profile is not None:
        world.last_ids = list(ctx.ids)
        world.last_profile = profile

    record = StepRecord(
        time=world.time,
        vehicles=[_vehicle_row(v, scenario) for v in world.vehicles],
        phi={v.id: world.prefs[v.id].phi for v in world.vehicles},
        alpha={v.id: world.prefs[v.id].alpha for v in world.vehicles},
        beta={v.id: world.prefs[v.id].beta for v in world.vehicles},
        solver=diag,
        bp=bp_records)
    log.records.append(record)
    return world


def _guarded_track(ctx: SceneContext | None, v, base_accel: float,
                   a_min: float) -> float:
    """Cap an acceleration when a same-lane leader is too close: brake
    comfortably inside the spacing buffer, hard inside the gap floor."""
    if ctx is None:
        return base_accel
    row = ctx.row_of(v.id)
    if row is None:
        return base_accel
    leader = agents._leader_gap(ctx, row)
    if leader is None:
        return base_accel
    _, gap, v_lead, _ = leader
    if v.v <= v_lead:
        return base_accel
    if gap < ctx.gap_req:
        return a_min
    if gap < ctx.gap_req + 2.0:
        return min(base_accel, FALLBACK_BRAKE)
    return base_accel


def _vehicle_row(v, scenario: Scenario):
    pos = position_with_overrun(scenario.path(v.path_id), v.s)
    return {"id": v.id, "path": v.path_id, "s": v.s, "v": v.v, "a": v.a,
            "x": float(pos[0]), "y": float(pos[1])}


def run_trial(cfg: ScenarioConfig, seed: int,
              scenario: Scenario | None = None, tables=None) -> TrialLog:
    """Spawn a seeded scene and run it until everyone exits, a collision
    occurs, or the time limit lapses."""
    if scenario is None:
        scenario = build_intersection(cfg.entry_length, cfg.exit_length,
                                      cfg.coop_radius, cfg.zone_radius)
    if tables is None:
        tables = path_tables(scenario)
    rng = np.random.default_rng(seed)
    vehicles = spawn_vehicles(cfg, rng, scenario)
    prefs = {v.id: PreferenceState(cfg.alpha_init, cfg.beta_init, 1.0)
             for v in vehicles}
    profiles = {}
    for v in vehicles:
        if v.kind == VehicleKind.HDV:
            name = agents.draw_archetype(rng, cfg.archetype_mix())
            profiles[v.id] = agents.HdvProfile.preset(name)
    all_ids = [v.id for v in vehicles]
    log = TrialLog(
        seed=seed, penetration=cfg.penetration, config_digest=cfg.digest(),
        kinds={v.id: v.kind.value for v in vehicles},
        paths={v.id: v.path_id for v in vehicles},
        archetypes={vid: p.archetype for vid, p in profiles.items()},
        spawn_s={v.id: v.s for v in vehicles},
        spawn_v={v.id: v.v for v in vehicles},
        path_length={v.id: scenario.path(v.path_id).total_length
                     for v in vehicles})
    world = WorldState(time=0.0, vehicles=vehicles, prefs=prefs,
                       hdv_profiles=profiles)
    max_steps = int(round(cfg.time_limit / cfg.dt_ctrl))
    status = "timeout"
    for _ in range(max_steps):
        step(world, scenario, cfg, log, tables)
        pair = detect_collision(world.vehicles, scenario)
        if pair is not None:
            status = "collision"
            log.collision_pair = pair
            break
        if all(vid in world.exited for vid in all_ids):
            status = "success"
            break
    log.status = status
    log.end_time = world.time
    log.exit_times = dict(world.exited)
    return log


def log_to_jsonl(log: TrialLog, path: str) -> None:
    """One JSON line per step record plus a trailing trial-summary record."""
    with open(path, "w") as fh:
        header = {
            "type": "header", "seed": log.seed, "penetration": log.penetration,
            "config_digest": log.config_digest, "kinds": log.kinds,
            "paths": log.paths, "archetypes": log.archetypes,
            "spawn_s": log.spawn_s, "spawn_v": log.spawn_v,
            "path_length": log.path_length,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in log.records:
            fh.write(json.dumps({
                "type": "step", "time": rec.time, "vehicles": rec.vehicles,
                "phi": rec.phi, "alpha": rec.alpha, "beta": rec.beta,
                "solver": {
                    "iterations": rec.solver.iterations,
                    "residual": rec.solver.residual,
                    "status": rec.solver.status,
                    "failed": rec.solver.failed,
                    "fallback": rec.solver.fallback,
                },
                "bp": [{
                    "vehicle_id": r.vehicle_id, "step": r.step,
                    "alpha_before": r.alpha_before, "alpha_after": r.alpha_after,
                    "beta_before": r.beta_before, "beta_after": r.beta_after,
                    "gap_self": r.gap_self, "gap_group": r.gap_group,
                    "grad_alpha": r.grad_alpha, "grad_beta": r.grad_beta,
                    "skipped": r.skipped,
                } for r in rec.bp],
            }, sort_keys=True) + "\n")
        summary = {
            "type": "summary", "status": log.status,
            "collision_pair": list(log.collision_pair) if log.collision_pair else None,
            "end_time": log.end_time, "exit_times": log.exit_times,
            "solver_failures": log.solver_failures,
        }
        fh.write(json.dumps(summary, sort_keys=True) + "\n")
