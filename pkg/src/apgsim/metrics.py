"""Evaluation metrics over trial logs: delay, post-encroachment time,
and batch aggregation.

Delay is traversal time minus the free-flow time of the traversed length
at the desired speed. A PET event pairs two successive traversals of a
conflict zone by vehicles on the two crossing paths: second entry time
minus first exit time, with zone crossings interpolated between log steps.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .engine import TrialLog
from .scenario import Scenario

HIGH_RISK_PET = 1.0
DESIRED_SPEED = 10.0


@dataclass
class PetEvent:
    conflict: tuple  # (path_a, path_b)
    first_id: int
    second_id: int
    value: float

    @property
    def high_risk(self) -> bool:
        return self.value < HIGH_RISK_PET


@dataclass
class TrialOutcome:
    seed: int
    penetration: float
    status: str
    delays: dict
    mean_delay: float | None
    pet_events: list
    min_pet: float | None
    n_high_risk: int
    solver_failures: int
    timed_out_ids: list = field(default_factory=list)


@dataclass
class BatchSummary:
    penetration: float
    trials: int
    success_rate: float
    collision_rate: float
    timeout_rate: float
    mean_delay: float | None
    high_risk_fraction: float | None

    def to_dict(self) -> dict:
        return {
            "penetration": self.penetration,
            "trials": self.trials,
            "success_rate": self.success_rate,
            "collision_rate": self.collision_rate,
            "timeout_rate": self.timeout_rate,
            "mean_delay_s": self.mean_delay,
            "high_risk_pet_fraction": self.high_risk_fraction,
        }


def compute_delay(log: TrialLog, vehicle_id: int,
                  desired_speed: float = DESIRED_SPEED) -> float | None:
    """Traversal time past free flow for one vehicle; None when the vehicle
    never exits within the log."""
    if vehicle_id not in log.exit_times:
        return None
    distance = log.path_length[vehicle_id] - log.spawn_s[vehicle_id]
    free_flow = distance / desired_speed
    return max(log.exit_times[vehicle_id] - free_flow, 0.0)


def _s_series(log: TrialLog, vehicle_id: int):
    ts, ss = [0.0], [log.spawn_s[vehicle_id]]
    for rec in log.records:
        for row in rec.vehicles:
            if row["id"] == vehicle_id:
                ts.append(rec.time)
                ss.append(row["s"])
                break
    return ts, ss


def _crossing_time(ts, ss, target):
    """First time the monotone series reaches the target arclength."""
    if ss[0] >= target:
        return ts[0]
    for k in range(1, len(ts)):
        if ss[k] >= target:
            ds = ss[k] - ss[k - 1]
            frac = (target - ss[k - 1]) / ds if ds > 0 else 1.0
            return ts[k - 1] + frac * (ts[k] - ts[k - 1])
    return None


def compute_pet(log: TrialLog, scenario: Scenario,
                vehicle_length: float = 4.5) -> list:
    """PET events at every conflict zone: for successive traversals by the
    two crossing flows, the later vehicle's zone entry minus the earlier
    vehicle's zone exit (vehicle extent included, floored at zero)."""
    half_len = 0.5 * vehicle_length
    series = {vid: _s_series(log, vid) for vid in log.paths}
    events = []
    for c in scenario.conflicts:
        traversals = []
        for vid, path_id in log.paths.items():
            if path_id == c.path_a:
                s_cp = c.s_a
            elif path_id == c.path_b:
                s_cp = c.s_b
            else:
                continue
            ts, ss = series[vid]
            t_in = _crossing_time(ts, ss, s_cp - c.zone_radius - half_len)
            t_out = _crossing_time(ts, ss, s_cp + c.zone_radius + half_len)
            if t_in is None or t_out is None:
                continue
            traversals.append((t_in, t_out, vid, path_id))
        traversals.sort()
        for k in range(1, len(traversals)):
            first, second = traversals[k - 1], traversals[k]
            if first[3] == second[3]:
                continue  # same flow: car following, not encroachment
            events.append(PetEvent(
                conflict=(c.path_a, c.path_b),
                first_id=first[2], second_id=second[2],
                value=max(second[0] - first[1], 0.0)))
    return events


def evaluate_trial(log: TrialLog, scenario: Scenario) -> TrialOutcome:
    delays = {}
    timed_out = []
    for vid in log.paths:
        d = compute_delay(log, vid)
        if d is None:
            timed_out.append(vid)
        else:
            delays[vid] = d
    pets = compute_pet(log, scenario)
    mean_delay = sum(delays.values()) / len(delays) if delays else None
    return TrialOutcome(
        seed=log.seed,
        penetration=log.penetration,
        status=log.status,
        delays=delays,
        mean_delay=mean_delay,
        pet_events=pets,
        min_pet=min((e.value for e in pets), default=None),
        n_high_risk=sum(e.high_risk for e in pets),
        solver_failures=log.solver_failures,
        timed_out_ids=timed_out)


def aggregate(outcomes: list, penetration: float) -> BatchSummary:
    """Batch rates as plain proportions; delay over exited vehicles; the
    high-risk share over all PET events of non-collision trials."""
    if not outcomes:
        raise ValueError("aggregate needs at least one trial outcome")
    n = len(outcomes)
    n_succ = sum(o.status == "success" for o in outcomes)
    n_coll = sum(o.status == "collision" for o in outcomes)
    n_time = sum(o.status == "timeout" for o in outcomes)
    all_delays = [d for o in outcomes for d in o.delays.values()]
    mean_delay = sum(all_delays) / len(all_delays) if all_delays else None
    pet_total, pet_risky = 0, 0
    for o in outcomes:
        if o.status == "collision":
            continue
        pet_total += len(o.pet_events)
        pet_risky += o.n_high_risk
    return BatchSummary(
        penetration=penetration,
        trials=n,
        success_rate=n_succ / n,
        collision_rate=n_coll / n,
        timeout_rate=n_time / n,
        mean_delay=mean_delay,
        high_risk_fraction=(pet_risky / pet_total) if pet_total else None)


CSV_COLUMNS = ("seed", "penetration", "status", "mean_delay_s", "min_pet_s",
               "n_high_risk_pet", "solver_failures")


def trials_csv(outcomes: list) -> str:
    """Fixed-order CSV rows, one per trial, formatted for byte-stable diffs."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for o in outcomes:
        writer.writerow([
            o.seed,
            f"{o.penetration:.6f}",
            o.status,
            "" if o.mean_delay is None else f"{o.mean_delay:.6f}",
            "" if o.min_pet is None else f"{o.min_pet:.6f}",
            o.n_high_risk,
            o.solver_failures,
        ])
    return buf.getvalue()


def summary_json(summary: BatchSummary) -> str:
    return json.dumps(summary.to_dict(), indent=2, sort_keys=True)
