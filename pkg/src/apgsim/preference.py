"""Online estimation of human-driver preferences.

Each control step the estimated action (the driver's row in the previous
solve) is compared with the realized acceleration. The per-component
reward gaps drive a gradient step on (alpha, beta); the solver dependence
of the estimated rewards is differenced through a restricted re-solve of
that single row under perturbed preferences, so zero gaps are an exact
fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import solver
from .utility import SceneContext

ALPHA_BOUNDS = (0.1, 5.0)
BETA_BOUNDS = (0.1, 50.0)
BP_DELTA = 0.05
BP_STEP_CAP = 0.25

# The restricted row re-solve only has to rank preferences, not plan
# trajectories; a loose tolerance keeps the four solves per update cheap.
_RESOLVE_OPTS = solver.SolverOptions(max_iterations=12, tolerance=1e-2)


@dataclass
class PreferenceUpdateRecord:
    vehicle_id: int
    step: int
    alpha_before: float
    alpha_after: float
    beta_before: float
    beta_after: float
    gap_self: float
    gap_group: float
    grad_alpha: float
    grad_beta: float
    skipped: bool = False


def estimated_action_for(vehicle_id: int, profile_ids: list[int] | None,
                         last_solved_profile: np.ndarray | None):
    """The vehicle's acceleration row from the previous solve, or None for
    vehicles that were not part of it."""
    if last_solved_profile is None or profile_ids is None:
        return None
    try:
        row = profile_ids.index(vehicle_id)
    except ValueError:
        return None
    return np.array(last_solved_profile[row], dtype=float)


def _reward_components(ctx: SceneContext, row: int, own_action: np.ndarray,
                       base_profile: np.ndarray):
    """Unweighted discounted (self, group) reward sums for one vehicle with
    everyone else frozen at the base profile."""
    X = np.array(base_profile, dtype=float)
    X[row, :] = own_action
    r_s = float(ctx.utility(row, X, alpha=1.0, beta=0.0))
    r_g = float(ctx.utility(row, X, alpha=0.0, beta=1.0))
    return r_s, r_g


def _restricted_resolve(ctx: SceneContext, row: int, base_profile: np.ndarray,
                        alpha: float, beta: float, cfg,
                        warm: np.ndarray) -> np.ndarray | None:
    """Best own-row response under given preferences, others frozen."""
    n, T = ctx.n, ctx.horizon
    base = np.array(base_profile, dtype=float)

    def objective_batch(rows):
        B = rows.shape[0]
        X = np.repeat(base[None], B, axis=0)
        X[:, row, :] = rows
        return -ctx.utility(row, X, alpha=alpha, beta=beta)

    problem = solver.OptimizationProblem(
        n_vars=T,
        lower=np.full(T, cfg.a_min),
        upper=np.full(T, cfg.a_max),
        objective_batch=objective_batch)
    res = solver.solve(problem, warm, _RESOLVE_OPTS)
    if not np.all(np.isfinite(res.profile)):
        return None
    return res.profile


def bp_update(prefs_i, estimated_action: np.ndarray, observed_accel: float,
              ctx: SceneContext, row: int, base_profile: np.ndarray,
              cfg, mu: float, step: int = 0,
              vehicle_id: int = -1) -> PreferenceUpdateRecord:
    """One gradient step on the preference estimate of an HDV.

    gap = estimated reward minus observed reward, per component; the
    update follows -mu * gap * d(estimated reward)/d(preference), the
    derivative taken by central differences through the restricted
    re-solve with perturbation BP_DELTA, capped at BP_STEP_CAP per step.
    """
    alpha, beta = prefs_i
    T = ctx.horizon
    observed_row = np.full(T, observed_accel)
    est_s, est_g = _reward_components(ctx, row, estimated_action, base_profile)
    obs_s, obs_g = _reward_components(ctx, row, observed_row, base_profile)
    gap_s = est_s - obs_s
    gap_g = est_g - obs_g

    record = PreferenceUpdateRecord(
        vehicle_id=vehicle_id, step=step,
        alpha_before=alpha, alpha_after=alpha,
        beta_before=beta, beta_after=beta,
        gap_self=gap_s, gap_group=gap_g,
        grad_alpha=0.0, grad_beta=0.0)

    if gap_s == 0.0 and gap_g == 0.0:
        return record

    def resolved_components(a, b):
        act = _restricted_resolve(ctx, row, base_profile, a, b, cfg,
                                  warm=estimated_action)
        if act is None:
            return None
        return _reward_components(ctx, row, act, base_profile)

    grad_alpha = 0.0
    grad_beta = 0.0
    if gap_s != 0.0:
        hi = resolved_components(alpha + BP_DELTA, beta)
        lo = resolved_components(alpha - BP_DELTA, beta)
        if hi is None or lo is None:
            record.skipped = True
            return record
        grad_alpha = gap_s * (hi[0] - lo[0]) / (2.0 * BP_DELTA)
    if gap_g != 0.0:
        hi = resolved_components(alpha, beta + BP_DELTA)
        lo = resolved_components(alpha, beta - BP_DELTA)
        if hi is None or lo is None:
            record.skipped = True
            return record
        grad_beta = gap_g * (hi[1] - lo[1]) / (2.0 * BP_DELTA)

    step_a = float(np.clip(mu * grad_alpha, -BP_STEP_CAP, BP_STEP_CAP))
    step_b = float(np.clip(mu * grad_beta, -BP_STEP_CAP, BP_STEP_CAP))
    record.grad_alpha = grad_alpha
    record.grad_beta = grad_beta
    record.alpha_after = float(np.clip(alpha - step_a, *ALPHA_BOUNDS))
    record.beta_after = float(np.clip(beta - step_b, *BETA_BOUNDS))
    return record
