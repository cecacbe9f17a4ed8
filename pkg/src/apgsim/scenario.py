"""Intersection geometry, vehicle paths, conflict points, and seeded spawning.

The default scene is a 4-arm unsignalized intersection with one lane per
arm (lane width 3.5 m) and three movements per entrance arm: left turns
are quarter-circle arcs, rights are tight quarter arcs, throughs are
straight. All movements from one arm share the entrance lane polyline,
and all movements into one arm share the exit lane polyline, so pairs of
paths either cross transversally inside the box (a conflict point),
share a lane segment (handled as car-following), or are disjoint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

LANE_WIDTH = 3.5
VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 2.0
ZONE_RADIUS = 2.0
MIN_SPAWN_HEADWAY = 10.0
ARM_NAMES = ("south", "east", "north", "west")
MOVEMENTS = ("left", "through", "right")

# Chord tolerance for sampling arcs into polylines (m).
_ARC_CHORD_TOL = 0.005


class VehicleKind(str, Enum):
    CAV = "CAV"
    HDV = "HDV"


@dataclass(frozen=True)
class PathGeometry:
    """A fixed route: polyline from entrance through the box to the exit."""

    id: str
    waypoints: np.ndarray  # (n, 2) float64
    stop_line_s: float
    entry_arm: str = ""
    exit_arm: str = ""
    cum_s: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[0] < 2 or wp.shape[1] != 2:
            raise ValueError(f"path {self.id}: need at least 2 waypoints of dim 2")
        seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
        if np.any(seg <= 0):
            raise ValueError(f"path {self.id}: consecutive waypoints must be distinct")
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "cum_s", np.concatenate([[0.0], np.cumsum(seg)]))
        if not (0.0 < self.stop_line_s < self.total_length):
            raise ValueError(f"path {self.id}: stop line must lie strictly inside the path")

    @property
    def total_length(self) -> float:
        return float(self.cum_s[-1])


@dataclass(frozen=True)
class ConflictPoint:
    """Transversal crossing of two paths, located by arclength on each."""

    path_a: str
    path_b: str
    s_a: float
    s_b: float
    zone_radius: float = ZONE_RADIUS


@dataclass(frozen=True)
class Scenario:
    paths: tuple[PathGeometry, ...]
    conflicts: tuple[ConflictPoint, ...]
    center: tuple[float, float] = (0.0, 0.0)
    coop_radius: float = 80.0

    def path(self, path_id: str) -> PathGeometry:
        return self._by_id[path_id]

    @property
    def _by_id(self) -> dict:
        d = self.__dict__.get("_by_id_cache")
        if d is None:
            d = {p.id: p for p in self.paths}
            self.__dict__["_by_id_cache"] = d
        return d

    def conflict_between(self, id_a: str, id_b: str) -> ConflictPoint | None:
        for c in self.conflicts:
            if (c.path_a, c.path_b) == (id_a, id_b):
                return c
            if (c.path_a, c.path_b) == (id_b, id_a):
                return ConflictPoint(id_b, id_a, c.s_b, c.s_a, c.zone_radius)
        return None

    def crossing_zone(self, id_a: str, id_b: str, margin: float):
        """Arclength interval on each path covering every crossing of the
        pair, widened by `margin`; None for non-crossing pairs. Cached."""
        cache = self.__dict__.setdefault("_zone_cache", {})
        key = (id_a, id_b, margin)
        if key in cache:
            return cache[key]
        hits = path_crossings(self.path(id_a), self.path(id_b))
        if not hits:
            zone = None
        else:
            s_as = [h[0] for h in hits]
            s_bs = [h[1] for h in hits]
            zone = (min(s_as) - margin, max(s_as) + margin,
                    min(s_bs) - margin, max(s_bs) + margin)
        cache[key] = zone
        cache[(id_b, id_a, margin)] = None if zone is None else \
            (zone[2], zone[3], zone[0], zone[1])
        return cache[key]

    def proximity_zone(self, id_a: str, id_b: str, dist: float, margin: float):
        """Arclength interval on each path where the two centerlines pass
        within `dist` of each other, widened by `margin`; None when they
        never come that close. Covers near-miss path pairs that do not
        cross. Cached."""
        cache = self.__dict__.setdefault("_prox_cache", {})
        key = (id_a, id_b, dist, margin)
        if key in cache:
            return cache[key]
        pa, pb = self.path(id_a), self.path(id_b)
        sa = np.arange(0.0, pa.total_length, 0.5)
        sb = np.arange(0.0, pb.total_length, 0.5)
        qa = np.stack([position_on_path(pa, s) for s in sa])
        qb = np.stack([position_on_path(pb, s) for s in sb])
        d2 = ((qa[:, None, :] - qb[None, :, :]) ** 2).sum(axis=2)
        mask = d2 < dist * dist
        if not mask.any():
            zone = None
        else:
            rows, cols = np.nonzero(mask)
            zone = (float(sa[rows.min()]) - margin, float(sa[rows.max()]) + margin,
                    float(sb[cols.min()]) - margin, float(sb[cols.max()]) + margin)
        cache[key] = zone
        cache[(id_b, id_a, dist, margin)] = None if zone is None else \
            (zone[2], zone[3], zone[0], zone[1])
        return cache[key]


@dataclass
class VehicleState:
    id: int
    path_id: str
    s: float
    v: float
    a: float
    kind: VehicleKind
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH


def position_on_path(path: PathGeometry, s: float, debug: bool = False) -> np.ndarray:
    """Linear interpolation along the polyline; out-of-range s clamps."""
    if s < 0.0 or s > path.total_length:
        if debug:
            raise ValueError(f"s={s} outside [0, {path.total_length}] on path {path.id}")
        s = min(max(s, 0.0), path.total_length)
    cs = path.cum_s
    idx = int(np.searchsorted(cs, s, side="right")) - 1
    idx = min(max(idx, 0), len(cs) - 2)
    seg = cs[idx + 1] - cs[idx]
    frac = (s - cs[idx]) / seg
    return path.waypoints[idx] + frac * (path.waypoints[idx + 1] - path.waypoints[idx])


def position_with_overrun(path: PathGeometry, s: float) -> np.ndarray:
    """Position for s possibly past the path end, extrapolating the last segment."""
    if s <= path.total_length:
        return position_on_path(path, max(s, 0.0))
    tangent = heading_on_path(path, path.total_length)
    d = s - path.total_length
    return path.waypoints[-1] + d * np.array([math.cos(tangent), math.sin(tangent)])


def heading_on_path(path: PathGeometry, s: float) -> float:
    """Tangent angle (rad) of the segment containing arclength s."""
    cs = path.cum_s
    idx = int(np.searchsorted(cs, min(max(s, 0.0), path.total_length), side="right")) - 1
    idx = min(max(idx, 0), len(cs) - 2)
    d = path.waypoints[idx + 1] - path.waypoints[idx]
    return math.atan2(d[1], d[0])


def _proper_crossing(p, q, r, w, eps=1e-12):
    """Intersection parameter (t, u) of segments p->q and r->w if they cross
    transversally at interior points; None for parallel, collinear, or
    endpoint-touching pairs."""
    d1 = q - p
    d2 = w - r
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(denom) < eps:
        return None
    diff = r - p
    t = (diff[0] * d2[1] - diff[1] * d2[0]) / denom
    u = (diff[0] * d1[1] - diff[1] * d1[0]) / denom
    strict = 1e-9
    if strict < t < 1.0 - strict and strict < u < 1.0 - strict:
        return t, u
    return None


def path_crossings(path_a: PathGeometry, path_b: PathGeometry) -> list:
    """All transversal crossings of two polylines as (s_a, s_b) pairs,
    sorted by arclength on path_a. Parallel, collinear, and
    endpoint-touching segment pairs never count."""
    wa, wb = path_a.waypoints, path_b.waypoints
    ca, cb = path_a.cum_s, path_b.cum_s
    hits = []
    for i in range(len(wa) - 1):
        for j in range(len(wb) - 1):
            hit = _proper_crossing(wa[i], wa[i + 1], wb[j], wb[j + 1])
            if hit is None:
                continue
            t, u = hit
            s_a = ca[i] + t * (ca[i + 1] - ca[i])
            s_b = cb[j] + u * (cb[j + 1] - cb[j])
            hits.append((float(s_a), float(s_b)))
    return sorted(hits)


def conflict_point(path_a: PathGeometry, path_b: PathGeometry,
                   zone_radius: float = ZONE_RADIUS) -> ConflictPoint | None:
    """First transversal crossing of two polylines, ordered by arclength on
    path_a. Returns None when the paths do not cross (parallel, disjoint,
    or merely sharing a lane segment)."""
    hits = path_crossings(path_a, path_b)
    if not hits:
        return None
    s_a, s_b = hits[0]
    return ConflictPoint(path_a.id, path_b.id, s_a, s_b, zone_radius)


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _arc_points(center, radius, a0, a1):
    """Sample an arc so the chord error stays below _ARC_CHORD_TOL."""
    dmax = 2.0 * math.acos(max(1.0 - _ARC_CHORD_TOL / radius, -1.0))
    n = max(2, int(math.ceil(abs(a1 - a0) / dmax)) + 1)
    ang = np.linspace(a0, a1, n)
    return np.stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)], axis=1)


def _south_arm_waypoints(movement: str, entry_len: float, exit_len: float) -> np.ndarray:
    """Movement polylines of the south arm; other arms are rotations of these."""
    b = 2 * LANE_WIDTH / 2  # box half-extent = one lane each way
    off = LANE_WIDTH / 2
    entry = np.array([[off, -b - entry_len], [off, -b]])
    if movement == "through":
        interior = np.array([[off, b]])
        exit_pts = np.array([[off, b + exit_len]])
        return np.vstack([entry, interior, exit_pts])
    if movement == "left":
        # quarter arc from (off,-b) heading north to (-b, off) heading west
        arc = _arc_points((-b, -b), b + off, 0.0, math.pi / 2)
        exit_pts = np.array([[-b - exit_len, off]])
        return np.vstack([entry, arc[1:], exit_pts])
    if movement == "right":
        # tight quarter arc from (off,-b) to (b, -off)
        arc = _arc_points((b, -b), b - off, math.pi, math.pi / 2)
        exit_pts = np.array([[b + exit_len, -off]])
        return np.vstack([entry, arc[1:], exit_pts])
    raise ValueError(f"unknown movement {movement!r}")


# Exit arm of each (entry arm rotation k, movement): rotating the south arm
# by k*90 deg maps its exits (left->west, through->north, right->east) around.
_SOUTH_EXITS = {"left": "west", "through": "north", "right": "east"}


def build_intersection(entry_len: float = 60.0, exit_len: float = 60.0,
                       coop_radius: float = 80.0,
                       zone_radius: float = ZONE_RADIUS) -> Scenario:
    """Default 4-arm intersection: 12 paths, conflicts from pairwise crossings."""
    paths = []
    for k, arm in enumerate(ARM_NAMES):
        rot = _rot(k * math.pi / 2)
        for mv in MOVEMENTS:
            wp = _south_arm_waypoints(mv, entry_len, exit_len) @ rot.T
            exit_arm = ARM_NAMES[(ARM_NAMES.index(_SOUTH_EXITS[mv]) + k) % 4]
            paths.append(PathGeometry(
                id=f"{arm}_{mv}", waypoints=wp, stop_line_s=entry_len,
                entry_arm=arm, exit_arm=exit_arm))
    conflicts = []
    for i in range(len(paths)):
        for j in range(i + 1, len(paths)):
            if paths[i].entry_arm == paths[j].entry_arm:
                continue  # shared entrance lane, never a crossing
            cp = conflict_point(paths[i], paths[j], zone_radius)
            if cp is not None:
                conflicts.append(cp)
    return Scenario(paths=tuple(paths), conflicts=tuple(conflicts),
                    center=(0.0, 0.0), coop_radius=coop_radius)


def spawn_vehicles(config, rng: np.random.Generator, scenario: Scenario) -> list[VehicleState]:
    """Seeded initial placement: each vehicle 30-50 m upstream of its stop
    line at 6-10 m/s, exactly round(p*N) CAVs, no two vehicles on a shared
    entrance lane closer than the minimum headway."""
    n = config.n_vehicles
    n_cav = int(round(config.penetration * n))
    placements = []  # (path, s)
    by_arm: dict[str, list[float]] = {}
    max_tries = 200 * n
    tries = 0
    while len(placements) < n:
        if tries >= max_tries:
            raise ValueError(
                f"cannot place {n} vehicles with {MIN_SPAWN_HEADWAY} m headway; "
                "reduce n_vehicles or widen the spawn range")
        tries += 1
        path = scenario.paths[int(rng.integers(len(scenario.paths)))]
        lo = path.stop_line_s - config.spawn_distance_max
        hi = path.stop_line_s - config.spawn_distance_min
        s = float(rng.uniform(lo, hi))
        taken = by_arm.setdefault(path.entry_arm, [])
        if any(abs(s - other) < MIN_SPAWN_HEADWAY for other in taken):
            continue
        taken.append(s)
        placements.append((path, s))
    cav_ids = set(rng.permutation(n)[:n_cav].tolist())
    vehicles = []
    for vid, (path, s) in enumerate(placements):
        vehicles.append(VehicleState(
            id=vid, path_id=path.id, s=s,
            v=float(rng.uniform(config.spawn_speed_min, config.spawn_speed_max)),
            a=0.0,
            kind=VehicleKind.CAV if vid in cav_ids else VehicleKind.HDV,
            length=config.vehicle_length, width=config.vehicle_width))
    return vehicles


def geometry_json(scenario: Scenario) -> str:
    """Geometry as a JSON document for external plotting."""
    doc = {
        "center": list(scenario.center),
        "coop_radius": scenario.coop_radius,
        "paths": [
            {
                "id": p.id,
                "entry_arm": p.entry_arm,
                "exit_arm": p.exit_arm,
                "stop_line_s": p.stop_line_s,
                "total_length": p.total_length,
                "waypoints": p.waypoints.tolist(),
            }
            for p in scenario.paths
        ],
        "conflicts": [
            {
                "path_a": c.path_a, "path_b": c.path_b,
                "s_a": c.s_a, "s_b": c.s_b, "zone_radius": c.zone_radius,
            }
            for c in scenario.conflicts
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)
