"""
Encounter Analysis and Reporting
Extracts human-robot encounters from trajectory logs, classifies them and computes ESR/ALV/AD
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sn_config import EncounterSettings
from sn_simcore import TrajectoryLog
from sn_world import (SQRT2, GridQueryError, OccupancyGrid, geodesic_distance, line_of_sight,
                      wrap_angle)

logger = logging.getLogger(__name__)

CURVE_BINS = 100


class EncounterClass(Enum):
    BLIND_CORNER = "BlindCorner"
    FRONTAL = "FrontalApproach"
    INTERSECTION = "Intersection"
    FOLLOWING = "PersonFollowing"
    OTHER = "Other"


# Inclusion rules are tried in this order; the first match wins.
CLASSIFICATION_ORDER = (EncounterClass.BLIND_CORNER, EncounterClass.FRONTAL,
                        EncounterClass.INTERSECTION, EncounterClass.FOLLOWING)
REPORT_CLASSES = (EncounterClass.FRONTAL, EncounterClass.INTERSECTION,
                  EncounterClass.BLIND_CORNER, EncounterClass.FOLLOWING, EncounterClass.OTHER)


@dataclass(frozen=True)
class EncounterParams:
    t_min: int = 10
    d_max: float = 3.0
    t_front: int = 5
    theta_max: float = math.pi / 3
    delta_slack: float = math.pi / 6
    t_view: int = 5
    t_blind: int = 5
    fov: float = math.pi / 2
    sight_range: float = 5.0
    min_displacement: float = 0.2
    d_diff_max: float = 0.5

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value <= 0:
                raise ValueError(f"EncounterParams.{name} must be positive")
        if self.t_front > self.t_min:
            raise ValueError("EncounterParams.t_front must not exceed t_min")
        if self.theta_max > math.pi:
            raise ValueError("EncounterParams.theta_max must not exceed pi")

    @classmethod
    def from_settings(cls, settings: EncounterSettings) -> 'EncounterParams':
        return cls(**asdict(settings))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class Encounter:
    pedestrian_id: int
    t1: int
    t2: int
    clazz: Optional[EncounterClass] = None
    collided: bool = False
    log_index: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {'pedestrian_id': self.pedestrian_id, 't1': self.t1, 't2': self.t2,
                'class': self.clazz.value if self.clazz else None, 'collided': self.collided,
                'log_index': self.log_index}


@dataclass
class ClassStatistics:
    count: int = 0
    collided: int = 0
    esr: float = 0.0
    alv: float = 0.0
    ad: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class EncounterReport:
    params: EncounterParams
    v_max: float
    per_class: Dict[str, ClassStatistics] = field(default_factory=dict)
    curves: Dict[str, Dict[str, List[float]]] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(stats.count for stats in self.per_class.values())

    def to_dict(self) -> Dict[str, Any]:
        return {'params': self.params.to_dict(), 'v_max': self.v_max, 'total': self.total,
                'per_class': {name: stats.to_dict() for name, stats in self.per_class.items()},
                'curves': self.curves}


class _Track:
    """Array views of one log, built once per analysis"""

    def __init__(self, log: TrajectoryLog):
        self.log = log
        self.agent = log.agent_positions()
        self.heading = log.agent_headings()
        self.peds = [log.pedestrian_positions(i) for i in range(log.n_pedestrians)]


def _bearing_error(heading: float, source: np.ndarray, target: np.ndarray) -> float:
    direction = math.atan2(target[1] - source[1], target[0] - source[0])
    return abs(wrap_angle(heading - direction))


def _blind(track: _Track, grid: OccupancyGrid, params: EncounterParams, t: int, pid: int) -> bool:
    a, p = track.agent[t], track.peds[pid][t]
    if _bearing_error(track.heading[t], a, p) > params.fov / 2:
        return True
    if math.hypot(p[0] - a[0], p[1] - a[1]) > params.sight_range:
        return True
    try:
        return not line_of_sight(grid, (float(a[0]), float(a[1])), (float(p[0]), float(p[1])))
    except GridQueryError:
        return True


def blind(log: TrajectoryLog, grid: OccupancyGrid, params: EncounterParams, t: int,
          pedestrian_id: int) -> bool:
    """True when the pedestrian is outside the field of view, out of range or occluded"""
    return _blind(_Track(log), grid, params, t, pedestrian_id)


def general_direction(positions: np.ndarray, t1: int, t: int, min_displacement: float) -> Optional[float]:
    """Angle of the net displacement over [t1, t]; None when it is shorter than min_displacement"""
    dx, dy = positions[t] - positions[t1]
    if math.hypot(dx, dy) < min_displacement:
        return None
    return math.atan2(dy, dx)


def _orientation(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> np.ndarray:
    cross = (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])
    return np.sign(cross)


def _within_box(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> np.ndarray:
    """q inside the bounding box of segment p-r"""
    return ((np.minimum(p[..., 0], r[..., 0]) <= q[..., 0]) & (q[..., 0] <= np.maximum(p[..., 0], r[..., 0]))
            & (np.minimum(p[..., 1], r[..., 1]) <= q[..., 1]) & (q[..., 1] <= np.maximum(p[..., 1], r[..., 1])))


def _segments(polyline: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    points = np.asarray(polyline, dtype=float).reshape(-1, 2)
    if len(points) == 1:
        return points, points
    return points[:-1], points[1:]


def paths_intersect(agent_path: np.ndarray, pedestrian_path: np.ndarray) -> bool:
    """Any proper or touching intersection between two polylines"""
    if len(agent_path) == 0 or len(pedestrian_path) == 0:
        return False
    a0, a1 = _segments(agent_path)
    b0, b1 = _segments(pedestrian_path)
    p1, q1 = a0[:, None, :], a1[:, None, :]
    p2, q2 = b0[None, :, :], b1[None, :, :]
    o1 = _orientation(p1, q1, p2)
    o2 = _orientation(p1, q1, q2)
    o3 = _orientation(p2, q2, p1)
    o4 = _orientation(p2, q2, q1)
    hit = (o1 * o2 < 0) & (o3 * o4 < 0)
    hit |= (o1 == 0) & _within_box(p1, p2, q1)
    hit |= (o2 == 0) & _within_box(p1, q2, q1)
    hit |= (o3 == 0) & _within_box(p2, p1, q2)
    hit |= (o4 == 0) & _within_box(p2, q1, q2)
    return bool(np.any(hit))


def _runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Maximal [start, end] index runs of True values"""
    runs, start = [], None
    for t, value in enumerate(mask):
        if value and start is None:
            start = t
        elif not value and start is not None:
            runs.append((start, t - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs


def _safe_geodesic(grid: OccupancyGrid, a: np.ndarray, b: np.ndarray) -> float:
    try:
        return geodesic_distance(grid, (float(a[0]), float(a[1])), (float(b[0]), float(b[1])))
    except GridQueryError:
        return math.inf


class EncounterAnalyzer:
    """Runs the encounter protocol over trajectory logs of one or more maps"""

    def __init__(self, params: Optional[EncounterParams] = None, v_max: float = 0.5):
        self.params = params or EncounterParams()
        self.v_max = v_max
        self.logger = logging.getLogger(__name__)

    def _close_mask(self, track: _Track, grid: OccupancyGrid, pid: int) -> np.ndarray:
        params = self.params
        agent, ped = track.agent, track.peds[pid]
        euclid = np.hypot(ped[:, 0] - agent[:, 0], ped[:, 1] - agent[:, 1])
        # geodesic >= euclidean - res*sqrt(2), so far pairs never need a search.
        candidates = euclid - grid.resolution * SQRT2 < params.d_max
        mask = np.zeros(len(euclid), dtype=bool)
        for t in np.nonzero(candidates)[0]:
            mask[t] = _safe_geodesic(grid, agent[t], ped[t]) < params.d_max
        return mask

    def _extract(self, track: _Track, grid: OccupancyGrid, log_index: int) -> List[Encounter]:
        params = self.params
        encounters = []
        for pid in range(len(track.peds)):
            collision_t = track.log.collision_time(pid)
            for t1, t2 in _runs(self._close_mask(track, grid, pid)):
                if t2 - t1 < params.t_min:
                    continue
                front_end = min(t1 + params.t_front, t2)
                if any(_bearing_error(track.heading[t], track.agent[t], track.peds[pid][t]) > params.theta_max
                       for t in range(t1, front_end + 1)):
                    continue
                collided = collision_t is not None and t1 <= collision_t <= t2
                encounters.append(Encounter(pid, t1, t2, collided=collided, log_index=log_index))
        return encounters

    def extract_encounters(self, log: TrajectoryLog, grid: OccupancyGrid, log_index: int = 0) -> List[Encounter]:
        return self._extract(_Track(log), grid, log_index)

    def _rules(self, enc: Encounter, track: _Track, grid: OccupancyGrid) -> Dict[EncounterClass, bool]:
        params = self.params
        pid, t1, t2 = enc.pedestrian_id, enc.t1, enc.t2
        agent, ped = track.agent, track.peds[pid]

        blind_window = range(t1, min(t1 + params.t_blind, t2) + 1)
        d_diff = _safe_geodesic(grid, agent[t1], ped[t1]) - float(np.hypot(*(ped[t1] - agent[t1])))
        blind_corner = (all(_blind(track, grid, params, t, pid) for t in blind_window)
                        and d_diff <= params.d_diff_max)

        view_window = range(t1, min(t1 + params.t_view, t2) + 1)
        visible = all(not _blind(track, grid, params, t, pid) for t in view_window)
        rules = {EncounterClass.BLIND_CORNER: blind_corner, EncounterClass.FRONTAL: False,
                 EncounterClass.INTERSECTION: False, EncounterClass.FOLLOWING: False}
        heading_agent = general_direction(agent, t1, t2, params.min_displacement)
        heading_ped = general_direction(ped, t1, t2, params.min_displacement)
        if not visible or heading_agent is None or heading_ped is None:
            return rules
        diff = abs(wrap_angle(heading_ped - heading_agent))
        slack = params.delta_slack
        rules[EncounterClass.FRONTAL] = diff >= math.pi - slack
        rules[EncounterClass.INTERSECTION] = (abs(diff - math.pi / 2) <= slack
                                              and paths_intersect(agent[t1:t2 + 1], ped[t1:t2 + 1]))
        rules[EncounterClass.FOLLOWING] = diff <= slack
        return rules

    def inclusion_rules(self, enc: Encounter, log: TrajectoryLog, grid: OccupancyGrid) -> Dict[EncounterClass, bool]:
        """Every inclusion rule evaluated independently of the others"""
        return self._rules(enc, _Track(log), grid)

    def _classify(self, enc: Encounter, track: _Track, grid: OccupancyGrid) -> EncounterClass:
        rules = self._rules(enc, track, grid)
        for clazz in CLASSIFICATION_ORDER:
            if rules[clazz]:
                return clazz
        return EncounterClass.OTHER

    def classify(self, enc: Encounter, log: TrajectoryLog, grid: OccupancyGrid) -> EncounterClass:
        return self._classify(enc, _Track(log), grid)

    def analyze_log(self, log: TrajectoryLog, grid: OccupancyGrid, log_index: int = 0) -> List[Encounter]:
        """Extract and label every encounter of one log"""
        track = _Track(log)
        encounters = self._extract(track, grid, log_index)
        for enc in encounters:
            enc.clazz = self._classify(enc, track, grid)
        self.logger.debug(f"Log {log_index}: {len(encounters)} encounters")
        return encounters

    def encounter_series(self, enc: Encounter, log: TrajectoryLog) -> Tuple[np.ndarray, np.ndarray]:
        """Signed agent speed (m/s) and agent-person distance over [t1, t2]"""
        records = log.records[enc.t1:enc.t2 + 1]
        speeds = np.array([r.action.lin_vel * self.v_max for r in records], dtype=float)
        distances = np.array([math.hypot(r.pedestrians[enc.pedestrian_id].x - r.agent.x,
                                         r.pedestrians[enc.pedestrian_id].y - r.agent.y)
                              for r in records], dtype=float)
        return speeds, distances

    def build_report(self, encounters: Sequence[Encounter], logs: Sequence[TrajectoryLog]) -> EncounterReport:
        report = EncounterReport(self.params, self.v_max)
        centers = (np.arange(CURVE_BINS) + 0.5) * (100.0 / CURVE_BINS)
        for clazz in REPORT_CLASSES:
            members = [e for e in encounters if e.clazz == clazz]
            stats = ClassStatistics(count=len(members), collided=sum(1 for e in members if e.collided))
            alv_curve = np.zeros(CURVE_BINS)
            ad_curve = np.zeros(CURVE_BINS)
            if members:
                survival = Fraction(stats.count - stats.collided, stats.count) * 100
                stats.esr = float(survival)
                alvs, ads = [], []
                for enc in members:
                    speeds, distances = self.encounter_series(enc, logs[enc.log_index])
                    alvs.append(float(np.mean(speeds)))
                    ads.append(float(np.mean(distances)))
                    completion = np.linspace(0.0, 100.0, len(speeds))
                    alv_curve += np.interp(centers, completion, speeds)
                    ad_curve += np.interp(centers, completion, distances)
                stats.alv = float(np.mean(alvs))
                stats.ad = float(np.mean(ads))
                alv_curve /= len(members)
                ad_curve /= len(members)
            report.per_class[clazz.value] = stats
            report.curves[clazz.value] = {'bins': centers.tolist(), 'alv': alv_curve.tolist(),
                                          'ad': ad_curve.tolist()}
        self.logger.info(f"Encounter report: {report.total} encounters over {len(logs)} logs")
        return report


def extract_encounters(log: TrajectoryLog, grid: OccupancyGrid, params: EncounterParams) -> List[Encounter]:
    return EncounterAnalyzer(params).extract_encounters(log, grid)


def classify(encounter: Encounter, log: TrajectoryLog, grid: OccupancyGrid,
             params: EncounterParams) -> EncounterClass:
    return EncounterAnalyzer(params).classify(encounter, log, grid)


def encounter_metrics(encounters: Sequence[Encounter], logs: Sequence[TrajectoryLog],
                      params: Optional[EncounterParams] = None, v_max: float = 0.5) -> EncounterReport:
    return EncounterAnalyzer(params, v_max).build_report(encounters, logs)
