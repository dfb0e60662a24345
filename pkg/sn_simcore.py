"""
Social Navigation Simulation Core
Agent kinematics, pedestrian patrols, termination, reward and deterministic rollouts
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sn_config import SocialNavConfig, SocialNavError, RewardSettings, SimulationSettings
from sn_social_features import SocialFeatures, compute_features
from sn_world import (DistanceField, GridQueryError, OccupancyGrid, Point, Pose, UnreachableError,
                      distance_field, euclidean_distance, shortest_path, wrap_angle)

logger = logging.getLogger(__name__)


class EpisodeConstructionError(SocialNavError):
    """Episode cannot be simulated on the given map"""


class EpisodeStatus(Enum):
    RUNNING = "Running"
    SUCCESS = "Success"
    HUMAN_COLLISION = "HumanCollision"
    TIMEOUT = "Timeout"


def _clamp_unit(value: float) -> float:
    return min(max(float(value), -1.0), 1.0)


@dataclass(frozen=True)
class Action:
    lin_vel: float = 0.0
    ang_vel: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.lin_vel) and math.isfinite(self.ang_vel)):
            raise ValueError(f"Action components must be finite: {self}")
        object.__setattr__(self, 'lin_vel', _clamp_unit(self.lin_vel))
        object.__setattr__(self, 'ang_vel', _clamp_unit(self.ang_vel))

    def to_list(self) -> List[float]:
        return [self.lin_vel, self.ang_vel]


@dataclass(frozen=True)
class PedestrianSpec:
    """Patrol between two points.

    `phase` is the starting offset as a fraction of the full round trip (out and back),
    so 0.25 starts halfway out, 0.5 at `end` and 0.75 halfway back.
    """
    start: Point
    end: Point
    speed: float
    phase: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {'start': list(self.start), 'end': list(self.end),
                'speed': self.speed, 'phase': self.phase}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PedestrianSpec':
        return cls(start=(float(data['start'][0]), float(data['start'][1])),
                   end=(float(data['end'][0]), float(data['end'][1])),
                   speed=float(data['speed']), phase=float(data.get('phase', 0.0)))


@dataclass(frozen=True)
class Episode:
    map_id: str
    agent_start: Pose
    goal: Point
    pedestrians: Tuple[PedestrianSpec, ...] = ()
    seed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'map_id': self.map_id,
            'agent_start': {'x': self.agent_start.x, 'y': self.agent_start.y,
                            'theta': self.agent_start.theta},
            'goal': {'x': self.goal[0], 'y': self.goal[1]},
            'pedestrians': [p.to_dict() for p in self.pedestrians],
            'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Episode':
        try:
            start = data['agent_start']
            goal = data['goal']
            return cls(map_id=str(data['map_id']),
                       agent_start=Pose(float(start['x']), float(start['y']), float(start['theta'])),
                       goal=(float(goal['x']), float(goal['y'])),
                       pedestrians=tuple(PedestrianSpec.from_dict(p) for p in data.get('pedestrians', [])),
                       seed=int(data.get('seed', 0)))
        except (KeyError, TypeError, ValueError) as e:
            raise EpisodeConstructionError(f"Malformed episode record: {e}")


@dataclass(frozen=True)
class StepOutcome:
    reward: float = 0.0
    progress: float = 0.0
    slack: float = 0.0
    collision_penalty: float = 0.0
    success_bonus: float = 0.0
    i_coll: bool = False
    i_back: bool = False
    i_succ: bool = False
    i_human_coll: bool = False
    goal_unreachable: bool = False
    collided_pedestrian: Optional[int] = None

    @staticmethod
    def total(progress: float, slack: float, collision_penalty: float, success_bonus: float) -> float:
        # Fixed summation order; log readers re-add terms the same way.
        return progress + slack + collision_penalty + success_bonus

    def to_dict(self) -> Dict[str, Any]:
        return {
            'reward': self.reward,
            'terms': {'progress': self.progress, 'slack': self.slack,
                      'collision': self.collision_penalty, 'success': self.success_bonus},
            'flags': {'coll': self.i_coll, 'back': self.i_back, 'succ': self.i_succ,
                      'human_coll': self.i_human_coll, 'goal_unreachable': self.goal_unreachable},
            'collided_pedestrian': self.collided_pedestrian,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'StepOutcome':
        terms, flags = data['terms'], data['flags']
        return cls(reward=data['reward'], progress=terms['progress'], slack=terms['slack'],
                   collision_penalty=terms['collision'], success_bonus=terms['success'],
                   i_coll=flags['coll'], i_back=flags['back'], i_succ=flags['succ'],
                   i_human_coll=flags['human_coll'],
                   goal_unreachable=flags.get('goal_unreachable', False),
                   collided_pedestrian=data.get('collided_pedestrian'))


@dataclass
class StepRecord:
    t: int
    agent: Pose
    action: Action
    pedestrians: List[Pose]
    outcome: StepOutcome
    features: Optional[SocialFeatures] = None


@dataclass
class TrajectoryLog:
    episode: Episode
    records: List[StepRecord] = field(default_factory=list)
    status: EpisodeStatus = EpisodeStatus.RUNNING
    policy_name: str = ""
    config: Dict[str, Any] = field(default_factory=dict)
    map_file: Optional[str] = None

    @property
    def t_end(self) -> int:
        return self.records[-1].t if self.records else 0

    def agent_positions(self) -> np.ndarray:
        return np.array([[r.agent.x, r.agent.y] for r in self.records], dtype=float).reshape(-1, 2)

    def agent_headings(self) -> np.ndarray:
        return np.array([r.agent.theta for r in self.records], dtype=float)

    def pedestrian_positions(self, index: int) -> np.ndarray:
        return np.array([[r.pedestrians[index].x, r.pedestrians[index].y] for r in self.records],
                        dtype=float).reshape(-1, 2)

    @property
    def n_pedestrians(self) -> int:
        return len(self.episode.pedestrians)

    def collision_time(self, pedestrian_id: int) -> Optional[int]:
        """Timestep of the terminal human collision with this pedestrian, if any"""
        if self.status != EpisodeStatus.HUMAN_COLLISION or not self.records:
            return None
        last = self.records[-1]
        if last.outcome.collided_pedestrian == pedestrian_id:
            return last.t
        return None


@dataclass
class SimState:
    t: int
    agent: Pose
    pedestrians: List[Pose]
    goal_distance: float
    blocked: bool = False
    status: EpisodeStatus = EpisodeStatus.RUNNING
    collided_pedestrian: Optional[int] = None


class PedestrianPatrol:
    """Back-and-forth walk along the start/end shortest path at constant speed"""

    def __init__(self, spec: PedestrianSpec, grid: OccupancyGrid,
                 fallback_grid: Optional[OccupancyGrid] = None):
        self.spec = spec
        path = None
        for candidate in (grid, fallback_grid):
            if candidate is None:
                continue
            try:
                path = shortest_path(candidate, spec.start, spec.end)
                break
            except (UnreachableError, GridQueryError) as e:
                logger.debug(f"Patrol {spec.start}->{spec.end} not plannable on {candidate!r}: {e}")
        if path is None:
            raise EpisodeConstructionError(f"Pedestrian patrol {spec.start} -> {spec.end} is unreachable")
        inner = list(path.waypoints[1:-1])
        self.points = np.array([spec.start] + inner + [spec.end], dtype=float)
        seg = np.diff(self.points, axis=0)
        self.seg_lengths = np.hypot(seg[:, 0], seg[:, 1])
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_lengths)])
        self.length = float(self.cum[-1])
        self._headings = np.arctan2(seg[:, 1], seg[:, 0])

    def _point_at(self, s: float) -> Tuple[float, float, int]:
        seg = int(np.searchsorted(self.cum, s, side='right')) - 1
        seg = min(max(seg, 0), len(self.seg_lengths) - 1)
        while seg < len(self.seg_lengths) - 1 and self.seg_lengths[seg] == 0.0:
            seg += 1
        frac = 0.0 if self.seg_lengths[seg] == 0.0 else (s - self.cum[seg]) / self.seg_lengths[seg]
        frac = min(max(frac, 0.0), 1.0)
        p = self.points[seg] + frac * (self.points[seg + 1] - self.points[seg])
        return float(p[0]), float(p[1]), seg

    def pose_at(self, t: int, dt: float) -> Pose:
        if self.length == 0.0:
            return Pose(self.spec.start[0], self.spec.start[1], 0.0)
        period = 2.0 * self.length
        s = (self.spec.phase * period + self.spec.speed * dt * t) % period
        if s <= self.length:
            x, y, seg = self._point_at(s)
            heading = float(self._headings[seg])
        else:
            x, y, seg = self._point_at(period - s)
            heading = float(self._headings[seg]) + math.pi
        return Pose(x, y, heading)


def pedestrian_position(spec: PedestrianSpec, grid: OccupancyGrid, t: int, dt: float = 0.1) -> Pose:
    return PedestrianPatrol(spec, grid).pose_at(t, dt)


def agent_step(pose: Pose, action: Action, grid: OccupancyGrid, dt: float, v_max: float,
               w_max: float, r_agent: float = 0.2) -> Tuple[Pose, bool]:
    """Rotate, then translate along the new heading; a blocked move keeps the old position.

    Positive ang_vel turns clockwise. Returns the new pose and the obstacle-collision flag.
    """
    theta = wrap_angle(pose.theta - action.ang_vel * w_max * dt)
    step = action.lin_vel * v_max * dt
    if step == 0.0:
        return Pose(pose.x, pose.y, theta), False
    nx = pose.x + step * math.cos(theta)
    ny = pose.y + step * math.sin(theta)
    mid = (0.5 * (pose.x + nx), 0.5 * (pose.y + ny))
    if grid.disc_collides((nx, ny), r_agent) or grid.disc_collides(mid, r_agent):
        return Pose(pose.x, pose.y, theta), True
    return Pose(nx, ny, theta), False


def check_termination(agent: Pose, pedestrians: Sequence[Pose], goal: Point, t: int,
                      settings: SimulationSettings) -> Tuple[EpisodeStatus, Optional[int]]:
    """HumanCollision, then Success, then Timeout, then Running"""
    contact = settings.r_agent + settings.r_human
    hit, hit_distance = None, math.inf
    for i, ped in enumerate(pedestrians):
        d = math.hypot(ped.x - agent.x, ped.y - agent.y)
        if d < contact and d < hit_distance:
            hit, hit_distance = i, d
    if hit is not None:
        return EpisodeStatus.HUMAN_COLLISION, hit
    if euclidean_distance(agent.position, goal) < settings.goal_radius:
        return EpisodeStatus.SUCCESS, None
    if t >= settings.max_steps:
        return EpisodeStatus.TIMEOUT, None
    return EpisodeStatus.RUNNING, None


def compute_reward(prev_state: SimState, state: SimState, action: Action,
                   settings: RewardSettings) -> StepOutcome:
    unreachable = not (math.isfinite(prev_state.goal_distance) and math.isfinite(state.goal_distance))
    progress = 0.0 if unreachable else -(state.goal_distance - prev_state.goal_distance)
    i_coll = state.blocked
    i_back = action.lin_vel < 0
    i_succ = state.status == EpisodeStatus.SUCCESS
    i_human = state.status == EpisodeStatus.HUMAN_COLLISION
    slack = settings.slack
    collision_penalty = -settings.collision_coef * (int(i_coll) + int(i_back))
    success_bonus = settings.success_coef * int(i_succ)
    if unreachable:
        logger.warning(f"Goal unreachable at t={state.t}; progress term zeroed")
    return StepOutcome(
        reward=StepOutcome.total(progress, slack, collision_penalty, success_bonus),
        progress=progress, slack=slack, collision_penalty=collision_penalty,
        success_bonus=success_bonus, i_coll=i_coll, i_back=i_back, i_succ=i_succ,
        i_human_coll=i_human, goal_unreachable=unreachable,
        collided_pedestrian=state.collided_pedestrian,
    )


@dataclass
class PolicyInput:
    """Everything a policy may look at when choosing the next action"""
    t: int
    agent: Pose
    pedestrians: List[Pose]
    goal: Point
    features: SocialFeatures
    prev_action: Action
    grid: OccupancyGrid
    nav_grid: OccupancyGrid
    goal_field: DistanceField
    nav_goal_field: DistanceField
    blocked: bool = False


class Policy(ABC):
    name = "policy"

    def reset(self, episode: Episode, rng: np.random.Generator) -> None:
        """Called once before the first action of every episode"""

    @abstractmethod
    def act(self, view: PolicyInput) -> Action:
        ...


def _validate_episode(episode: Episode, grid: OccupancyGrid) -> None:
    for label, point in (('agent start', episode.agent_start.position), ('goal', episode.goal)):
        if not grid.in_bounds(point):
            raise EpisodeConstructionError(f"{label} {point} outside map {grid.map_id}")
        if not grid.is_free(grid.point_to_cell(point)):
            raise EpisodeConstructionError(f"{label} {point} lies in an occupied cell")
    for i, ped in enumerate(episode.pedestrians):
        if ped.speed <= 0 or not 0.0 <= ped.phase < 1.0:
            raise EpisodeConstructionError(f"Pedestrian {i} has invalid speed or phase")


class EpisodeSimulator:
    """Steps one episode; used by run_episode and by the training rollouts"""

    def __init__(self, episode: Episode, grid: OccupancyGrid, config: SocialNavConfig,
                 nav_grid: Optional[OccupancyGrid] = None):
        self.logger = logging.getLogger(__name__)
        self.episode = episode
        self.grid = grid
        self.config = config
        self.sim = config.simulation
        self.nav_grid = nav_grid if nav_grid is not None else grid.inflate(self.sim.clearance)
        _validate_episode(episode, grid)
        try:
            self.goal_field = distance_field(grid, episode.goal)
        except GridQueryError as e:
            raise EpisodeConstructionError(f"Goal not on the map: {e}")
        if not math.isfinite(self.goal_field.distance_at(episode.agent_start.position)):
            raise EpisodeConstructionError("No navigable path from agent start to goal")
        try:
            self.nav_goal_field = distance_field(self.nav_grid, episode.goal)
        except GridQueryError:
            self.nav_goal_field = self.goal_field
        self.patrols = [PedestrianPatrol(spec, self.nav_grid, fallback_grid=grid)
                        for spec in episode.pedestrians]
        self.state: Optional[SimState] = None
        self.prev_action = Action()
        self.records: List[StepRecord] = []

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.status != EpisodeStatus.RUNNING

    def pedestrian_poses(self, t: int) -> List[Pose]:
        return [patrol.pose_at(t, self.sim.dt) for patrol in self.patrols]

    def _goal_distance(self, pose: Pose) -> float:
        try:
            return self.goal_field.distance_at(pose.position)
        except GridQueryError:
            return math.inf

    def _features(self, state: SimState) -> SocialFeatures:
        return compute_features(state.agent, state.pedestrians, self.config.features)

    def reset(self) -> StepRecord:
        agent = self.episode.agent_start
        peds = self.pedestrian_poses(0)
        status, hit = check_termination(agent, peds, self.episode.goal, 0, self.sim)
        self.state = SimState(0, agent, peds, self._goal_distance(agent), False, status, hit)
        self.prev_action = Action()
        outcome = StepOutcome(i_succ=status == EpisodeStatus.SUCCESS,
                              i_human_coll=status == EpisodeStatus.HUMAN_COLLISION,
                              collided_pedestrian=hit)
        record = StepRecord(0, agent, Action(), peds, outcome, self._features(self.state))
        self.records = [record]
        return record

    def view(self) -> PolicyInput:
        record = self.records[-1]
        return PolicyInput(t=self.state.t, agent=self.state.agent, pedestrians=self.state.pedestrians,
                           goal=self.episode.goal, features=record.features,
                           prev_action=self.prev_action, grid=self.grid, nav_grid=self.nav_grid,
                           goal_field=self.goal_field, nav_goal_field=self.nav_goal_field,
                           blocked=self.state.blocked)

    def step(self, action: Action) -> StepRecord:
        if self.state is None:
            raise SocialNavError("step() called before reset()")
        if self.done:
            raise SocialNavError("step() called after the episode terminated")
        prev = self.state
        t = prev.t + 1
        agent, blocked = agent_step(prev.agent, action, self.grid, self.sim.dt, self.sim.v_max,
                                    self.sim.w_max, self.sim.r_agent)
        peds = self.pedestrian_poses(t)
        status, hit = check_termination(agent, peds, self.episode.goal, t, self.sim)
        state = SimState(t, agent, peds, self._goal_distance(agent), blocked, status, hit)
        outcome = compute_reward(prev, state, action, self.config.reward)
        record = StepRecord(t, agent, action, peds, outcome, self._features(state))
        self.state = state
        self.prev_action = action
        self.records.append(record)
        if status != EpisodeStatus.RUNNING:
            self.logger.debug(f"Episode seed={self.episode.seed} ended {status.value} at t={t}")
        return record


def simulation_header(config: SocialNavConfig) -> Dict[str, Any]:
    """Physics and feature parameters embedded in every trajectory log"""
    sim = config.simulation
    return {
        'dt': sim.dt, 'v_max': sim.v_max, 'w_max': sim.w_max,
        'r_agent': sim.r_agent, 'r_human': sim.r_human, 'max_steps': sim.max_steps,
        'goal_radius': sim.goal_radius, 'clearance': sim.clearance,
        'reward': {'slack': config.reward.slack, 'collision_coef': config.reward.collision_coef,
                   'success_coef': config.reward.success_coef},
        'features': {'risk_radius': config.features.risk_radius,
                     'compass_radius': config.features.compass_radius,
                     'compass_sectors': config.features.compass_sectors},
    }


def run_episode(episode: Episode, policy: Policy, config: SocialNavConfig, grid: OccupancyGrid,
                nav_grid: Optional[OccupancyGrid] = None) -> TrajectoryLog:
    simulator = EpisodeSimulator(episode, grid, config, nav_grid)
    policy.reset(episode, np.random.default_rng(episode.seed))
    simulator.reset()
    while not simulator.done:
        simulator.step(policy.act(simulator.view()))
    log = TrajectoryLog(episode=episode, records=simulator.records, status=simulator.state.status,
                        policy_name=policy.name, config=simulation_header(config))
    logger.info(f"Episode seed={episode.seed} on {episode.map_id}: {log.status.value} "
                f"after {log.t_end} steps")
    return log
