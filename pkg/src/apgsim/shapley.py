"""Per-vehicle impact weights from marginal contributions.

Exact coalition enumeration is kept as a test oracle; production uses the
linearity shortcut on the additive game induced by the discounted reward
sums of the current best profile (self terms fully attributed, pair terms
split evenly), optionally coarsened into same-lane batches whose weight
is redistributed by singleton value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .utility import SceneContext, build_context

NORMALIZE_EPS = 0.1
MAX_EXACT_PLAYERS = 10


@dataclass(frozen=True)
class Batch:
    """One supernode: adjacent same-lane vehicles treated as a single player."""

    members: tuple[int, ...]


def shapley_exact(value_fn, n: int) -> list[float]:
    """Average marginal contribution over all coalitions (factorial cost)."""
    if n > MAX_EXACT_PLAYERS:
        raise ValueError(
            f"exact enumeration is limited to {MAX_EXACT_PLAYERS} players; "
            "use shapley_closed_form for production-size sets")
    players = list(range(n))
    values = [0.0] * n
    fact = math.factorial
    for i in players:
        rest = [p for p in players if p != i]
        total = 0.0
        for size in range(n):
            weight = fact(size) * fact(n - size - 1) / fact(n)
            for coal in combinations(rest, size):
                total += weight * (value_fn(tuple(sorted(coal + (i,))))
                                   - value_fn(coal))
        values[i] = total
    return values


def induced_game(u_self: np.ndarray, pair_sums: dict):
    """Coalition value function of the additive game behind a profile:
    sum of member self terms plus pair terms fully inside the coalition."""
    def value(coalition) -> float:
        c = set(coalition)
        total = sum(u_self[i] for i in sorted(c))
        for (i, j), u in pair_sums.items():
            if i in c and j in c:
                total += u
        return float(total)
    return value


def closed_form_values(u_self: np.ndarray, pair_sums: dict) -> np.ndarray:
    """Shapley values of the induced additive game: own self term plus half
    of every incident pair term."""
    phi = np.array(u_self, dtype=float)
    for (i, j), u in pair_sums.items():
        phi[i] += 0.5 * u
        phi[j] += 0.5 * u
    return phi


def shapley_closed_form(states, profile, prefs, scenario, cfg) -> np.ndarray:
    """Raw impact values for a cooperation set at its current best profile."""
    ctx = build_context(states, prefs, scenario, cfg)
    u_self, pair_sums = ctx.reward_sums(profile)
    return closed_form_values(u_self, pair_sums)


def _split_run(run: list[int], max_batch: int) -> list[list[int]]:
    """Recursive halving keeps groupings nested across max_batch values."""
    if len(run) <= max_batch:
        return [run]
    half = (len(run) + 1) // 2
    return _split_run(run[:half], max_batch) + _split_run(run[half:], max_batch)


def coarsen_batches(states, scenario, headway_threshold: float,
                    max_batch: int) -> list[Batch]:
    """Group same-path vehicles whose gaps fall below the threshold,
    front-to-back, capped at max_batch members; everyone else is a
    singleton. Batches partition the input set (by state index)."""
    by_path: dict[str, list[int]] = {}
    for k, v in enumerate(states):
        by_path.setdefault(v.path_id, []).append(k)
    batches = []
    for path_id in sorted(by_path):
        idxs = sorted(by_path[path_id], key=lambda k: -states[k].s)
        run: list[int] = []
        runs: list[list[int]] = []
        for k in idxs:
            if run and states[run[-1]].s - states[k].s < headway_threshold:
                run.append(k)
            else:
                if run:
                    runs.append(run)
                run = [k]
        if run:
            runs.append(run)
        for r in runs:
            for chunk in _split_run(r, max_batch):
                batches.append(Batch(members=tuple(chunk)))
    return sorted(batches, key=lambda b: b.members)


def redistribute_supernode(phi_b: float, singleton_values) -> list[float]:
    """Split a supernode weight over its members: proportional to positive
    singleton values, else evenly. Outputs sum to phi_b exactly."""
    vals = list(singleton_values)
    m = len(vals)
    total = sum(vals)
    if total > 0:
        out = [phi_b * v / total for v in vals]
    else:
        out = [phi_b / m] * m
    out[-1] = phi_b - sum(out[:-1])
    return out


def coarsened_values(u_self: np.ndarray, pair_sums: dict,
                     batches: list[Batch]) -> np.ndarray:
    """Closed-form values computed on the batch-level game, redistributed
    to members by singleton value."""
    owner = {}
    for b_idx, b in enumerate(batches):
        for m in b.members:
            owner[m] = b_idx
    nb = len(batches)
    phi_b = np.zeros(nb)
    for b_idx, b in enumerate(batches):
        phi_b[b_idx] = sum(u_self[m] for m in b.members)
    for (i, j), u in pair_sums.items():
        bi, bj = owner[i], owner[j]
        if bi == bj:
            phi_b[bi] += u
        else:
            phi_b[bi] += 0.5 * u
            phi_b[bj] += 0.5 * u
    phi = np.zeros(len(u_self))
    for b_idx, b in enumerate(batches):
        singles = [float(u_self[m]) for m in b.members]
        shares = redistribute_supernode(float(phi_b[b_idx]), singles)
        for m, share in zip(b.members, shares):
            phi[m] = share
    return phi


def normalize_weights(raw_phi) -> np.ndarray:
    """Map raw (possibly negative) impact values to positive multiplicative
    weights: shift to the minimum, add a floor, rescale to unit mean.
    Order preserving; homogeneous inputs map to all-ones."""
    phi, _ = normalize_with_floor(raw_phi)
    return phi


def normalize_with_floor(raw_phi):
    """normalize_weights plus the post-scaling value a minimum-raw player
    receives (assigned to vehicles outside the cooperation set)."""
    raw = np.asarray(raw_phi, dtype=float)
    if raw.size == 0:
        raise ValueError("weight normalization needs at least one value")
    shifted = np.maximum(raw - raw.min(), 0.0) + NORMALIZE_EPS
    scale = shifted.mean()
    return shifted / scale, NORMALIZE_EPS / scale
