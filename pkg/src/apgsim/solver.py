"""Equilibrium search: maximize the weighted potential under spacing and
speed-envelope constraints.

The nonlinear program is minimized in negated form with one-sided squared
penalties on constraint violations, a BFGS model Hessian, finite-difference
gradients, and Armijo backtracking. Accepted iterates never increase the
penalized objective, mirroring the finite improvement path that makes the
potential's maximizer an equilibrium.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .kernels import backend_numpy
from .utility import SceneContext

# Physical-danger level that marks a solution as a braking-fallback
# candidate rather than a usable plan.
SEVERE_VIOLATION = 1.0


@dataclass
class SolverOptions:
    max_iterations: int = 50
    tolerance: float = 1e-3
    lam: float = 100.0
    mu_pen: float = 100.0
    rho: float = 0.5
    c1: float = 1e-4
    fd_step: float = 1e-4
    max_backtracks: int = 30
    debug: bool = False

    def __post_init__(self):
        if self.tolerance <= 0 or not (0 < self.rho < 1) or not (0 < self.c1 < 1):
            raise ValueError("need tolerance > 0, rho and c1 in (0, 1)")


@dataclass
class OptimizationProblem:
    """Penalized minimization over a box: objective plus squared one-sided
    residuals of the spacing (collision) and speed-envelope rows."""

    n_vars: int
    lower: np.ndarray
    upper: np.ndarray
    objective_batch: Callable[[np.ndarray], np.ndarray]
    collision_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dynamics_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    n_collision: int = 0
    n_dynamics: int = 0
    collision_rows: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # fused (objective + weighted penalties) evaluation for the hot path
    fused_batch: Optional[Callable[[np.ndarray, float, float], np.ndarray]] = None
    # physical-danger score used for the braking-fallback decision
    danger_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def penalized_batch(self, X: np.ndarray, opts: SolverOptions) -> np.ndarray:
        if self.fused_batch is not None:
            return self.fused_batch(X, opts.lam, opts.mu_pen)
        f = self.objective_batch(X)
        if self.collision_batch is not None:
            f = f + opts.lam * self.collision_batch(X)
        if self.dynamics_batch is not None:
            f = f + opts.mu_pen * self.dynamics_batch(X)
        return f


@dataclass
class SolveResult:
    profile: np.ndarray
    objective: float          # maximized objective value at the solution
    penalized: float          # minimized objective including penalties
    residual: float
    iterations: int
    status: str               # converged | max_iter | line_search_stall
    fallback: bool = False    # severe residual violation: treat as braking fallback
    history: list = field(default_factory=list)


def fd_gradient(value_batch, x: np.ndarray, h: float) -> np.ndarray:
    """Central finite differences via one batched evaluation."""
    d = x.size
    X = np.repeat(x[None, :], 2 * d, axis=0)
    idx = np.arange(d)
    X[2 * idx, idx] += h
    X[2 * idx + 1, idx] -= h
    vals = value_batch(X)
    return (vals[0::2] - vals[1::2]) / (2.0 * h)


def projected_residual(grad: np.ndarray, x: np.ndarray,
                       lower: np.ndarray, upper: np.ndarray) -> float:
    """Stationarity measure: gradient components that cannot be followed
    because the corresponding bound is active are ignored."""
    g = grad.copy()
    g[(x <= lower) & (g > 0)] = 0.0
    g[(x >= upper) & (g < 0)] = 0.0
    return float(np.max(np.abs(g))) if g.size else 0.0


def lagrangian(x: np.ndarray, dx: np.ndarray, problem: OptimizationProblem,
               H_k: np.ndarray, opts: SolverOptions,
               grad: np.ndarray | None = None) -> float:
    """Local model value: quadratic objective model at x plus the true
    one-sided squared penalties evaluated at the displaced point."""
    if grad is None:
        grad = fd_gradient(problem.objective_batch, x, opts.fd_step)
    y = (x + dx)[None, :]
    val = 0.5 * dx @ H_k @ dx + grad @ dx
    if problem.collision_batch is not None:
        val += opts.lam * float(problem.collision_batch(y)[0])
    if problem.dynamics_batch is not None:
        val += opts.mu_pen * float(problem.dynamics_batch(y)[0])
    return float(val)


def line_search(f, x: np.ndarray, dx: np.ndarray, grad: np.ndarray,
                opts: SolverOptions) -> float:
    """Backtracking with the sufficient-decrease test: largest step in
    {1, rho, rho^2, ...} whose actual decrease beats c1 times the model
    decrease. Returns 0.0 after max_backtracks halvings (stall)."""
    slope = float(grad @ dx)
    fx = f(x)
    l = 1.0
    for _ in range(opts.max_backtracks + 1):
        if f(x + l * dx) <= fx + opts.c1 * l * slope:
            return l
        l *= opts.rho
    return 0.0


def _line_search_batched(F_batch, x, dx, fx, slope, lo, hi,
                         opts: SolverOptions, chunk: int = 4):
    """Same first-accepted step as line_search, evaluating candidate steps
    in small batches; candidates are clipped to the box."""
    steps = opts.rho ** np.arange(opts.max_backtracks + 1)
    for start in range(0, len(steps), chunk):
        ls = steps[start:start + chunk]
        cands = np.clip(x[None, :] + ls[:, None] * dx[None, :], lo, hi)
        vals = F_batch(cands)
        for k in range(len(ls)):
            if vals[k] <= fx + opts.c1 * ls[k] * slope:
                return float(ls[k]), cands[k], float(vals[k])
    return 0.0, x, fx


def bfgs_update(H_k: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Rank-two secant update of the model Hessian; skipped when the
    curvature pairing is too weak to keep H positive definite."""
    ys = float(y @ s)
    if ys <= 1e-10:
        return H_k
    Hs = H_k @ s
    sHs = float(s @ Hs)
    if sHs <= 1e-12:
        return H_k
    return H_k + np.outer(y, y) / ys - np.outer(Hs, Hs) / sHs


def solve(problem: OptimizationProblem, x0: np.ndarray,
          opts: SolverOptions | None = None) -> SolveResult:
    """Iterate model direction, backtracking step, and secant update until
    the projected gradient of the penalized objective is below tolerance."""
    opts = opts or SolverOptions()
    lo, hi = problem.lower, problem.upper
    x = np.clip(np.asarray(x0, dtype=float).ravel(), lo, hi)
    d = problem.n_vars

    def F_batch(X):
        return problem.penalized_batch(X, opts)

    def F(xq):
        return float(F_batch(np.clip(xq, lo, hi)[None, :])[0])

    fx = F(x)
    grad = fd_gradient(F_batch, x, opts.fd_step)
    H = np.eye(d)
    history = []
    status = "max_iter"
    iterations = 0
    reset_used = False
    stagnant = 0
    residual = projected_residual(grad, x, lo, hi)
    while iterations < opts.max_iterations:
        if residual <= opts.tolerance:
            status = "converged"
            break
        try:
            dx = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            dx = -grad
        # keep the direction inside the box at active bounds
        dx[(x <= lo) & (dx < 0)] = 0.0
        dx[(x >= hi) & (dx > 0)] = 0.0
        slope = float(grad @ dx)
        if slope >= 0.0:
            dx = -grad.copy()
            dx[(x <= lo) & (dx < 0)] = 0.0
            dx[(x >= hi) & (dx > 0)] = 0.0
            slope = float(grad @ dx)
            if slope >= 0.0:
                status = "line_search_stall"
                break
        l, x_new, fx_new = _line_search_batched(F_batch, x, dx, fx, slope,
                                                lo, hi, opts)
        if l == 0.0:
            if not reset_used:
                reset_used = True
                H = np.eye(d)
                continue
            status = "line_search_stall"
            break
        grad_new = fd_gradient(F_batch, x_new, opts.fd_step)
        if opts.debug:
            assert fx_new <= fx + opts.c1 * l * slope + 1e-12, "sufficient decrease violated"
            assert fx_new <= fx + 1e-12, "penalized objective increased"
            history.append({"step": l, "f_before": fx, "f_after": fx_new,
                            "slope": slope, "armijo_ok": True})
        H = bfgs_update(H, x_new - x, grad_new - grad)
        if fx - fx_new <= 1e-9 * max(1.0, abs(fx)):
            stagnant += 1
        else:
            stagnant = 0
        x, fx, grad = x_new, fx_new, grad_new
        iterations += 1
        residual = projected_residual(grad, x, lo, hi)
        if stagnant >= 2:
            break
    if residual <= opts.tolerance:
        status = "converged"

    violation = 0.0
    if problem.danger_batch is not None:
        violation = float(problem.danger_batch(x[None, :])[0])
    elif problem.collision_batch is not None:
        violation = float(problem.collision_batch(x[None, :])[0])
    return SolveResult(
        profile=x,
        objective=-float(problem.objective_batch(x[None, :])[0]),
        penalized=fx,
        residual=residual,
        iterations=iterations,
        status=status,
        fallback=violation > SEVERE_VIOLATION,
        history=history)


def build_problem(ctx: SceneContext, cfg) -> OptimizationProblem:
    """Wire a cooperation set into the penalized program over the flattened
    (n x T) acceleration matrix."""
    n, T = ctx.n, ctx.horizon
    d = n * T

    def objective_batch(X2):
        return -ctx.potential(X2.reshape(-1, n, T))

    def collision_batch(X2):
        return ctx.collision_penalty(X2.reshape(-1, n, T))

    def dynamics_batch(X2):
        return ctx.dynamics_penalty(X2.reshape(-1, n, T))

    def collision_rows(x):
        return _collision_row_values(ctx, x.reshape(n, T))

    def fused_batch(X2, lam, mu_pen):
        return ctx.penalized(X2.reshape(-1, n, T), lam, mu_pen)

    def danger_batch(X2):
        return ctx.danger(X2.reshape(-1, n, T))

    return OptimizationProblem(
        n_vars=d,
        lower=np.full(d, cfg.a_min),
        upper=np.full(d, cfg.a_max),
        objective_batch=objective_batch,
        collision_batch=collision_batch,
        dynamics_batch=dynamics_batch,
        n_collision=_count_collision_rows(ctx),
        n_dynamics=2 * T * n,
        collision_rows=collision_rows,
        fused_batch=fused_batch,
        danger_batch=danger_batch)


def _count_collision_rows(ctx: SceneContext) -> int:
    """Structural row count at the current states: one row per horizon step
    for each crossing pair still short of its conflict and each follower
    pair inside its shared-lane window."""
    count = 0
    for p in range(len(ctx.cp_i)):
        if (ctx.cp_si[p] - ctx.s0[ctx.cp_i[p]] > 0
                and ctx.cp_sj[p] - ctx.s0[ctx.cp_j[p]] > 0):
            count += 2 * ctx.horizon
    for p in range(len(ctx.fp_i)):
        ci = ctx.f_sign_i[p] * ctx.s0[ctx.fp_i[p]] + ctx.f_off_i[p]
        cj = ctx.f_sign_j[p] * ctx.s0[ctx.fp_j[p]] + ctx.f_off_j[p]
        if ci <= ctx.f_lim[p] and cj <= ctx.f_lim[p]:
            count += ctx.horizon
    return count


def _collision_row_values(ctx: SceneContext, profile: np.ndarray) -> np.ndarray:
    """Active spacing-row values c <= 0 at one profile (introspection path,
    always evaluated with the numpy backend)."""
    X = profile[None]
    S, V = backend_numpy.rollout_batch(X, ctx.s0, ctx.v0, ctx.dt, ctx.v_max)
    rows = []
    T = profile.shape[1]
    if len(ctx.cp_i):
        Sx = np.empty((1, S.shape[1], 2 * T))
        Sx[:, :, 0::2] = 0.5 * (S[:, :, :-1] + S[:, :, 1:])
        Sx[:, :, 1::2] = S[:, :, 1:]
        px, py = backend_numpy._positions_batch(
            Sx, ctx.pidx, ctx.wp_s, ctx.wp_x, ctx.wp_y)
        for p in range(len(ctx.cp_i)):
            i, j = ctx.cp_i[p], ctx.cp_j[p]
            for t in range(2 * T):
                if (ctx.cp_si[p] - Sx[0, i, t] <= 0
                        or ctx.cp_sj[p] - Sx[0, j, t] <= 0):
                    continue
                dist = float(np.hypot(px[0, i, t] - px[0, j, t],
                                      py[0, i, t] - py[0, j, t]))
                rows.append(ctx.d_safe - dist)
    for p in range(len(ctx.fp_i)):
        i, j = ctx.fp_i[p], ctx.fp_j[p]
        for t in range(1, T + 1):
            ci = ctx.f_sign_i[p] * S[0, i, t] + ctx.f_off_i[p]
            cj = ctx.f_sign_j[p] * S[0, j, t] + ctx.f_off_j[p]
            if ci > ctx.f_lim[p] or cj > ctx.f_lim[p]:
                continue
            rows.append(ctx.gap_req - abs(ci - cj))
    return np.array(rows)


def _yield_candidates(ctx: SceneContext, x0: np.ndarray,
                      pinned: dict | None) -> list[np.ndarray]:
    """Deterministic ordering starts for the most urgent crossing pair:
    lower row yields first, then the mirror. Basin selection for the
    orderings a local step cannot jump between."""
    pinned = pinned or {}
    best_p, best_gap = -1, np.inf
    for p in range(len(ctx.cp_i)):
        i, j = ctx.cp_i[p], ctx.cp_j[p]
        if int(i) in pinned or int(j) in pinned:
            continue
        d_i = ctx.cp_si[p] - ctx.s0[i]
        d_j = ctx.cp_sj[p] - ctx.s0[j]
        if d_i <= 0 or d_j <= 0:
            continue
        v_eps = ctx.weights.v_eps
        gap = abs(d_i / max(ctx.v0[i], v_eps) - d_j / max(ctx.v0[j], v_eps))
        if gap < best_gap:
            best_gap, best_p = gap, p
    if best_p < 0:
        return []
    i, j = int(ctx.cp_i[best_p]), int(ctx.cp_j[best_p])
    out = []
    for yielder, passer in ((i, j), (j, i)):
        cand = x0.copy()
        cand[yielder, :] = -2.0
        cand[passer, :] = 1.0
        out.append(cand)
    return out


def solve_cooperative(ctx: SceneContext, x0: np.ndarray, cfg,
                      opts: SolverOptions | None = None,
                      extra_starts: bool = False,
                      pinned: dict | None = None):
    """Solve the cooperation problem, optionally from ordering starts as
    well as the warm start; the best penalized value wins, earlier
    candidates win ties. `pinned` maps row index -> fixed acceleration for
    frozen rows (obstacles that are evaluated but not optimized)."""
    opts = opts or SolverOptions(
        max_iterations=cfg.solver_max_iterations, tolerance=cfg.solver_tolerance,
        lam=cfg.solver_lambda, mu_pen=cfg.solver_mu, rho=cfg.solver_rho,
        c1=cfg.solver_c1, fd_step=cfg.solver_fd_step)
    problem = build_problem(ctx, cfg)
    T = ctx.horizon
    if pinned:
        lower = problem.lower.reshape(ctx.n, T)
        upper = problem.upper.reshape(ctx.n, T)
        for row, accel in pinned.items():
            lower[row, :] = accel
            upper[row, :] = accel
    starts = [np.asarray(x0, dtype=float)]
    if extra_starts:
        starts.extend(_yield_candidates(ctx, starts[0], pinned))
    best = None
    iterations = 0
    for cand in starts:
        res = solve(problem, cand.ravel(), opts)
        iterations += res.iterations
        if best is None or res.penalized < best.penalized - 1e-12:
            best = res
    if best.iterations == 0 and best.status == "line_search_stall":
        # the warm profile sits where the local model is useless; a coast
        # profile restarts descent
        coast = np.zeros((ctx.n, T))
        for row, accel in (pinned or {}).items():
            coast[row, :] = accel
        res = solve(problem, coast.ravel(), opts)
        iterations += res.iterations
        if res.penalized < best.penalized - 1e-12:
            best = res
    best.iterations = iterations
    best.profile = best.profile.reshape(ctx.n, T)
    return best
