"""Command-line orchestration: trial batches, penetration sweeps,
ablations, and artifact emission.

    apgsim run --penetration 1.0 --trials 100 --seed 7 --out results/
    apgsim sweep --penetrations 0.375,0.5,0.625,0.75,0.875,1.0 --out results/
    apgsim geometry --out results/

Outputs per batch: trials.csv (one row per trial, fixed column order),
summary.json, the effective config echoed as config.json, and with
--trajectories one trial_<seed>.jsonl per trial. Trials run in seed order
regardless of --jobs parallelism, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
from pathlib import Path

from . import engine, metrics
from .config import ConfigError, ScenarioConfig, make_config, validate_config
from .scenario import build_intersection, geometry_json
from .utility import path_tables

log = logging.getLogger("apgsim")

_ABLATIONS = {"no-shapley": "no_shapley", "no-bp": "no_bp", "none": None}


def _setup_logging():
    level = os.environ.get("APG_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(args, **extra) -> ScenarioConfig:
    base = {}
    if getattr(args, "config", None):
        base = validate_config(args.config).to_dict()
    overrides = dict(base)
    if getattr(args, "penetration", None) is not None:
        overrides["penetration"] = args.penetration
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    for flag in _parse_ablation(getattr(args, "ablation", None)):
        overrides[flag] = True
    overrides.update(extra)
    return make_config(**overrides)


def _parse_ablation(spec: str | None) -> list[str]:
    if not spec:
        return []
    flags = []
    for token in spec.split(","):
        token = token.strip()
        if token not in _ABLATIONS:
            raise ConfigError([f"ablation: unknown component {token!r}"])
        field = _ABLATIONS[token]
        if field:
            flags.append(field)
    return flags


def _run_one(payload):
    cfg_dict, seed = payload
    cfg = ScenarioConfig(**cfg_dict)
    scenario = build_intersection(cfg.entry_length, cfg.exit_length,
                                  cfg.coop_radius, cfg.zone_radius)
    tables = path_tables(scenario)
    return engine.run_trial(cfg, seed, scenario, tables)


def run_batch(cfg: ScenarioConfig, jobs: int = 1):
    """Run cfg.trials seeded trials (seed, seed+1, ...) and return
    (logs, outcomes) in seed order."""
    scenario = build_intersection(cfg.entry_length, cfg.exit_length,
                                  cfg.coop_radius, cfg.zone_radius)
    tables = path_tables(scenario)
    seeds = [cfg.seed + k for k in range(cfg.trials)]
    if jobs <= 1:
        logs = [engine.run_trial(cfg, s, scenario, tables) for s in seeds]
    else:
        payloads = [(cfg.to_dict(), s) for s in seeds]
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            logs = list(pool.map(_run_one, payloads))
    outcomes = [metrics.evaluate_trial(lg, scenario) for lg in logs]
    return logs, outcomes


def _emit(outdir: Path, cfg: ScenarioConfig, logs, outcomes, trajectories: bool):
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "trials.csv").write_text(metrics.trials_csv(outcomes))
    summary = metrics.aggregate(outcomes, cfg.penetration)
    (outdir / "summary.json").write_text(metrics.summary_json(summary))
    (outdir / "config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    if trajectories:
        for lg in logs:
            engine.log_to_jsonl(lg, str(outdir / f"trial_{lg.seed}.jsonl"))
    return summary


def cmd_run(args) -> int:
    cfg = _load_config(args)
    log.info("running %d trials at penetration %.3f", cfg.trials, cfg.penetration)
    logs, outcomes = run_batch(cfg, jobs=args.jobs)
    summary = _emit(Path(args.out), cfg, logs, outcomes, args.trajectories)
    print(metrics.summary_json(summary))
    return 0


def cmd_sweep(args) -> int:
    rates = [float(tok) for tok in args.penetrations.split(",") if tok.strip()]
    rows = []
    for rate in rates:
        cfg = _load_config(args, penetration=rate)
        logs, outcomes = run_batch(cfg, jobs=args.jobs)
        sub = Path(args.out) / f"p{rate:g}"
        summary = _emit(sub, cfg, logs, outcomes, args.trajectories)
        rows.append(summary)
        log.info("penetration %.3f: success %.2f", rate, summary.success_rate)
    sweep_path = Path(args.out) / "sweep.csv"
    lines = ["penetration,trials,success_rate,collision_rate,timeout_rate,"
             "mean_delay_s,high_risk_pet_fraction"]
    for s in rows:
        d = s.to_dict()
        lines.append(",".join("" if d[k] is None else f"{d[k]:.6f}"
                              if isinstance(d[k], float) else str(d[k])
                              for k in ("penetration", "trials", "success_rate",
                                        "collision_rate", "timeout_rate",
                                        "mean_delay_s", "high_risk_pet_fraction")))
    sweep_path.parent.mkdir(parents=True, exist_ok=True)
    sweep_path.write_text("\n".join(lines) + "\n")
    print(sweep_path)
    return 0


def cmd_geometry(args) -> int:
    cfg = _load_config(args)
    scenario = build_intersection(cfg.entry_length, cfg.exit_length,
                                  cfg.coop_radius, cfg.zone_radius)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "geometry.json").write_text(geometry_json(scenario))
    print(outdir / "geometry.json")
    return 0


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--trials", type=int, help="number of trials")
    p.add_argument("--seed", type=int, help="base seed; trial k uses seed+k")
    p.add_argument("--ablation", help="comma list of no-shapley, no-bp, none")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--trajectories", action="store_true",
                   help="write per-trial jsonl logs")
    p.add_argument("--jobs", type=int, default=1, help="parallel trial workers")


def main(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(
        prog="apgsim",
        description="Cooperative driving trials at an unsignalized intersection")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one trial batch")
    _add_common(p_run)
    p_run.add_argument("--penetration", type=float, help="CAV share in [0, 1]")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a batch per penetration rate")
    _add_common(p_sweep)
    p_sweep.add_argument("--penetrations", required=True,
                         help="comma-separated rates, e.g. 0.375,0.5,1.0")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_geo = sub.add_parser("geometry", help="export the intersection geometry")
    _add_common(p_geo)
    p_geo.set_defaults(fn=cmd_geometry)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        for problem in e.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
