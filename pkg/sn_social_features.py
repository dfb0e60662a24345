"""
Social Feature Extraction
Ground-truth Social Information, Risk value and Social Compass for every timestep
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Any

from sn_config import FeatureSettings
from sn_world import Pose, TWO_PI

Vector = Tuple[float, float]


@dataclass(frozen=True)
class SocialInformation:
    """World-frame offsets pedestrian minus agent, in pedestrian order"""
    deltas: Tuple[Vector, ...]

    def __len__(self) -> int:
        return len(self.deltas)

    def distances(self) -> List[float]:
        return [math.hypot(dx, dy) for dx, dy in self.deltas]


@dataclass(frozen=True)
class SocialFeatures:
    risk: float
    compass: Tuple[float, ...]

    @property
    def sectors(self) -> int:
        return len(self.compass)

    def to_dict(self) -> Dict[str, Any]:
        return {'risk': self.risk, 'compass': list(self.compass)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SocialFeatures':
        return cls(float(data['risk']), tuple(float(v) for v in data['compass']))

    def as_vector(self) -> List[float]:
        return [self.risk] + list(self.compass)


def social_information(agent: Pose, pedestrians: Sequence[Pose]) -> SocialInformation:
    return SocialInformation(tuple((p.x - agent.x, p.y - agent.y) for p in pedestrians))


def _proximity(distance: float, radius: float) -> float:
    return min(max(1.0 - distance / radius, 0.0), 1.0)


def risk(si: SocialInformation, risk_radius: float) -> float:
    """1 at contact, falling linearly to 0 at risk_radius; no pedestrians gives 0"""
    if risk_radius <= 0:
        raise ValueError("risk_radius must be positive")
    if not si.deltas:
        return 0.0
    return _proximity(min(si.distances()), risk_radius)


def world_bearing(dx: float, dy: float) -> float:
    """Counter-clockwise world angle of an offset, east = 0"""
    return math.atan2(dy, dx)


def clockwise_bearing(agent: Pose, delta: Vector) -> float:
    """Angle of `delta` measured clockwise from the agent heading, in [0, 2pi)"""
    bearing = (agent.theta - world_bearing(delta[0], delta[1])) % TWO_PI
    if bearing >= TWO_PI:
        bearing = 0.0
    return bearing


def compass_sector(bearing: float, sectors: int) -> int:
    """Sector j holds bearings in [j*2pi/k, (j+1)*2pi/k)"""
    sector = min(int(bearing / (TWO_PI / sectors)), sectors - 1)
    while sector < sectors - 1 and bearing >= (sector + 1) * TWO_PI / sectors:
        sector += 1
    while sector > 0 and bearing < sector * TWO_PI / sectors:
        sector -= 1
    return sector


def social_compass(si: SocialInformation, agent: Pose, compass_radius: float,
                   sectors: int) -> Tuple[float, ...]:
    if sectors < 2:
        raise ValueError("Social compass needs at least 2 sectors")
    if compass_radius <= 0:
        raise ValueError("compass_radius must be positive")
    nearest = [math.inf] * sectors
    for delta, distance in zip(si.deltas, si.distances()):
        sector = compass_sector(clockwise_bearing(agent, delta), sectors)
        if distance < nearest[sector]:
            nearest[sector] = distance
    return tuple(_proximity(d, compass_radius) if d != math.inf else 0.0 for d in nearest)


def compute_features(agent: Pose, pedestrians: Sequence[Pose],
                     settings: FeatureSettings) -> SocialFeatures:
    si = social_information(agent, pedestrians)
    return SocialFeatures(
        risk=risk(si, settings.risk_radius),
        compass=social_compass(si, agent, settings.compass_radius, settings.compass_sectors),
    )
