"""Run configuration: every tunable surfaced with its default.

Unspecified fields take the published operating point: gamma 0.9,
horizon 8, learning rate 1, cooperation radius 80 m, reward weights
(2, 1, 0.05) with beta initialized at 10, spawns 30-50 m upstream at
6-10 m/s.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass


class ConfigError(ValueError):
    """Validation failure; `problems` lists one message per offending field."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class ScenarioConfig:
    n_vehicles: int = 8
    penetration: float = 1.0
    trials: int = 100
    seed: int = 0

    gamma: float = 0.9
    horizon: int = 8
    learning_rate: float = 1.0
    coop_radius: float = 80.0
    dt_ctrl: float = 0.1
    dt_plan: float = 0.5

    w_speed: float = 2.0
    w_dist: float = 1.0
    w_comfort: float = 0.05
    v_eps: float = 0.1
    # saturation of per-vehicle conflict-arrival times inside the pair
    # reward; arrivals beyond the 4 s lookahead are equivalent
    ttcp_cap: float = 4.0
    # the pair reward fades out over the last meters before the conflict so
    # the pass gate stays continuous
    pair_fade: float = 5.0
    alpha_init: float = 1.0
    beta_init: float = 10.0

    a_min: float = -6.0
    a_max: float = 3.0
    v_max: float = 10.0
    v_desired: float = 10.0
    # planar center distance kept between crossing vehicles while both
    # approach their conflict
    d_safe: float = 3.0
    # separating-axis footprint clearance kept between every vehicle pair
    clearance: float = 0.8
    # arrival-time separation required between crossing vehicles once the
    # earlier one is within the ttcp_cap time gate
    t_sep: float = 3.0
    # bumper-to-bumper floor between same-lane vehicles
    follow_gap: float = 3.0
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0

    spawn_distance_min: float = 30.0
    spawn_distance_max: float = 50.0
    spawn_speed_min: float = 6.0
    spawn_speed_max: float = 10.0

    entry_length: float = 60.0
    exit_length: float = 60.0
    zone_radius: float = 2.0

    headway_threshold: float = 8.0
    max_batch: int = 4
    mix_aggressive: float = 0.25
    mix_normal: float = 0.50
    mix_conservative: float = 0.25

    solver_max_iterations: int = 50
    # iteration budget for warm re-solves between full solves in the 10 Hz
    # loop; full-budget solves run at trial start, membership changes, and
    # every restart period
    solver_warm_iterations: int = 12
    solver_tolerance: float = 1e-3
    solver_lambda: float = 100.0
    solver_mu: float = 100.0
    solver_rho: float = 0.5
    solver_c1: float = 1e-4
    solver_fd_step: float = 1e-4

    time_limit: float = 40.0
    no_shapley: bool = False
    no_bp: bool = False

    def archetype_mix(self):
        return (("aggressive", self.mix_aggressive),
                ("normal", self.mix_normal),
                ("conservative", self.mix_conservative))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}


def _check(cfg: ScenarioConfig) -> list[str]:
    p = []
    if cfg.n_vehicles < 1:
        p.append("n_vehicles: must be at least 1")
    if not (0.0 <= cfg.penetration <= 1.0):
        p.append("penetration: must lie in [0, 1]")
    if cfg.trials < 1:
        p.append("trials: must be at least 1")
    if not (0.0 < cfg.gamma <= 1.0):
        p.append("gamma: must lie in (0, 1]")
    if cfg.horizon < 1:
        p.append("horizon: must be at least 1")
    if cfg.learning_rate < 0:
        p.append("learning_rate: must be nonnegative")
    for name in ("coop_radius", "dt_ctrl", "dt_plan", "v_eps", "v_max",
                 "v_desired", "d_safe", "vehicle_length", "vehicle_width",
                 "time_limit", "zone_radius", "entry_length", "exit_length",
                 "headway_threshold", "solver_tolerance", "solver_lambda",
                 "solver_mu", "solver_fd_step", "ttcp_cap", "pair_fade",
                 "follow_gap", "clearance", "t_sep"):
        if getattr(cfg, name) <= 0:
            p.append(f"{name}: must be positive")
    for name in ("w_speed", "w_dist", "w_comfort"):
        if getattr(cfg, name) < 0:
            p.append(f"{name}: must be nonnegative")
    if cfg.a_min >= cfg.a_max:
        p.append("a_min: must be below a_max")
    if cfg.spawn_distance_min > cfg.spawn_distance_max:
        p.append("spawn_distance_min: must not exceed spawn_distance_max")
    if cfg.spawn_speed_min > cfg.spawn_speed_max:
        p.append("spawn_speed_min: must not exceed spawn_speed_max")
    if cfg.spawn_distance_max >= cfg.entry_length:
        p.append("spawn_distance_max: must be below entry_length")
    if cfg.spawn_speed_max > cfg.v_max:
        p.append("spawn_speed_max: must not exceed v_max")
    if cfg.max_batch < 1:
        p.append("max_batch: must be at least 1")
    mix = cfg.mix_aggressive + cfg.mix_normal + cfg.mix_conservative
    if min(cfg.mix_aggressive, cfg.mix_normal, cfg.mix_conservative) < 0 \
            or abs(mix - 1.0) > 1e-9:
        p.append("mix_*: archetype shares must be nonnegative and sum to 1")
    if not (0 < cfg.solver_rho < 1):
        p.append("solver_rho: must lie in (0, 1)")
    if not (0 < cfg.solver_c1 < 1):
        p.append("solver_c1: must lie in (0, 1)")
    if cfg.solver_max_iterations < 1:
        p.append("solver_max_iterations: must be at least 1")
    if cfg.solver_warm_iterations < 1:
        p.append("solver_warm_iterations: must be at least 1")
    return p


def make_config(**overrides) -> ScenarioConfig:
    """Build and validate a config from keyword overrides."""
    problems = [f"{k}: unknown field" for k in overrides if k not in _FIELDS]
    known = {k: v for k, v in overrides.items() if k in _FIELDS}
    for k, v in list(known.items()):
        want = _FIELDS[k].type
        try:
            if want == "int":
                known[k] = int(v)
            elif want == "float":
                known[k] = float(v)
            elif want == "bool":
                known[k] = bool(v)
        except (TypeError, ValueError):
            problems.append(f"{k}: cannot interpret {v!r}")
            del known[k]
    cfg = ScenarioConfig(**known)
    problems += _check(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate_config(path: str) -> ScenarioConfig:
    """Load a JSON config document; unknown keys and out-of-range values
    are all reported together."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError([f"config file: not valid JSON ({e})"])
    if not isinstance(doc, dict):
        raise ConfigError(["config file: top level must be a JSON object"])
    return make_config(**doc)
