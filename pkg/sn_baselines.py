"""
Scripted Baseline Policies
Greedy shortest-path pursuit and its socially modulated variant
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from sn_config import SocialNavConfig
from sn_simcore import Action, Episode, Policy, PolicyInput
from sn_social_features import clockwise_bearing, social_information
from sn_world import Cell, DistanceField, GridQueryError, OccupancyGrid, Point, euclidean_distance, wrap_angle

FALLBACK_SEARCH_CELLS = 5

# Dynamic-window sampling for the social baseline
WINDOW_HORIZON = 20
WINDOW_LIN_VELS = (1.0, 0.5, 0.0, -0.5, -1.0)
WINDOW_ANG_VELS = (0.0, -0.5, 0.5, -1.0, 1.0)
SAFETY_MARGIN = 0.2
VELOCITY_WINDOW = 4


class StationaryPolicy(Policy):
    """Never moves; useful for timeouts and protocol fixtures"""
    name = "stationary"

    def act(self, view: PolicyInput) -> Action:
        return Action(0.0, 0.0)


def steer_towards(view: PolicyInput, target: Point, w_max: float, dt: float) -> Action:
    """Turn to face the target within one step when possible; drive only when roughly aligned"""
    desired = math.atan2(target[1] - view.agent.y, target[0] - view.agent.x)
    error = wrap_angle(desired - view.agent.theta)
    # Positive ang_vel is clockwise, so a counter-clockwise error needs a negative command.
    ang_vel = min(max(-error / (w_max * dt), -1.0), 1.0)
    lin_vel = 1.0 if abs(error) <= math.pi / 4 else 0.0
    return Action(lin_vel, ang_vel)


class GreedyPolicy(Policy):
    """Pure pursuit along the distance-field path to the goal; ignores pedestrians"""
    name = "greedy"

    def __init__(self, config: Optional[SocialNavConfig] = None, lookahead: float = 0.5):
        self.config = config or SocialNavConfig()
        self.lookahead = lookahead
        self.logger = logging.getLogger(__name__)

    def reset(self, episode: Episode, rng: np.random.Generator) -> None:
        self.episode = episode

    def _tracking_cell(self, field: DistanceField, point: Point) -> Optional[Cell]:
        grid = field.grid
        cell = grid.point_to_cell(point)
        if field.reachable(cell):
            return cell
        best = None
        row, col = cell
        for dr in range(-FALLBACK_SEARCH_CELLS, FALLBACK_SEARCH_CELLS + 1):
            for dc in range(-FALLBACK_SEARCH_CELLS, FALLBACK_SEARCH_CELLS + 1):
                candidate = (row + dr, col + dc)
                if not grid.is_free(candidate) or not field.reachable(candidate):
                    continue
                key = (euclidean_distance(point, grid.cell_center(candidate)), grid.cell_index(candidate))
                if best is None or key < best[0]:
                    best = (key, candidate)
        return None if best is None else best[1]

    def pursuit_target(self, view: PolicyInput) -> Point:
        position = view.agent.position
        if euclidean_distance(position, view.goal) <= self.lookahead:
            return view.goal
        for field in (view.nav_goal_field, view.goal_field):
            cell = self._tracking_cell(field, position)
            if cell is None:
                continue
            chain: List[Cell] = field.path_from(cell)
            if view.blocked and len(chain) > 1:
                # Hug the cell chain until the agent is moving again.
                return field.grid.cell_center(chain[1])
            for step in chain[1:]:
                center = field.grid.cell_center(step)
                if euclidean_distance(position, center) >= self.lookahead:
                    return center
            return view.goal
        self.logger.warning(f"No tracked path near {position}; heading straight for the goal")
        return view.goal

    def act(self, view: PolicyInput) -> Action:
        sim = self.config.simulation
        return steer_towards(view, self.pursuit_target(view), sim.w_max, sim.dt)


class SocialPolicy(GreedyPolicy):
    """Greedy pursuit slowed by risk, halted when someone is close, steered by the compass.

    Whenever a pedestrian is inside the risk radius the proposed action is held for
    `horizon` steps against constant-velocity pedestrian forecasts, dynamic-window style.
    If it would come within `contact + safety_margin`, the sampled window action that
    stays clear with the best goal progress replaces it; when none stays clear, the one
    that keeps contact furthest away wins.
    """
    name = "social"

    def __init__(self, config: Optional[SocialNavConfig] = None, lookahead: float = 0.5,
                 stop_risk: float = 0.7, compass_threshold: float = 0.5, scan_rate: float = 0.3,
                 horizon: int = WINDOW_HORIZON, safety_margin: float = SAFETY_MARGIN):
        super().__init__(config, lookahead)
        self.stop_risk = stop_risk
        self.compass_threshold = compass_threshold
        self.scan_rate = scan_rate
        self.horizon = horizon
        self.safety_margin = safety_margin
        self.window = [Action(v, w) for v in WINDOW_LIN_VELS for w in WINDOW_ANG_VELS]
        self._history: List[Tuple[int, np.ndarray]] = []
        self._footprint: Optional[Tuple[OccupancyGrid, np.ndarray]] = None

    def reset(self, episode: Episode, rng: np.random.Generator) -> None:
        super().reset(episode, rng)
        self._history = []

    @staticmethod
    def forward_sectors(sectors: int) -> List[int]:
        """Sectors whose centre lies within 90 degrees of the heading"""
        width = 2.0 * math.pi / sectors
        return [j for j in range(sectors)
                if (j + 0.5) * width < math.pi / 2 or (j + 0.5) * width > 3 * math.pi / 2]

    def _nearest_on_right(self, view: PolicyInput) -> bool:
        si = social_information(view.agent, view.pedestrians)
        distances = si.distances()
        nearest = int(np.argmin(distances))
        return clockwise_bearing(view.agent, si.deltas[nearest]) < math.pi

    def modulated(self, view: PolicyInput) -> Action:
        """Greedy action adjusted by the risk value and the social compass"""
        greedy = super().act(view)
        features = view.features
        if features is None or features.risk <= 0.0:
            return greedy
        risk = features.risk
        if risk > self.stop_risk:
            # Scan away from the closest person: clockwise bearings below pi are on the right.
            away = -self.scan_rate if self._nearest_on_right(view) else self.scan_rate
            return Action(0.0, away)
        width = 2.0 * math.pi / features.sectors
        forward = self.forward_sectors(features.sectors)
        strongest = max(forward, key=lambda j: (features.compass[j], -j))
        if features.compass[strongest] > self.compass_threshold:
            on_right = (strongest + 0.5) * width < math.pi
            return Action(1.0 - risk, -1.0 if on_right else 1.0)
        return Action(greedy.lin_vel * (1.0 - risk), greedy.ang_vel)

    def _observe(self, view: PolicyInput) -> np.ndarray:
        """Record pedestrian positions; the history restarts whenever steps are not consecutive"""
        positions = np.array([[p.x, p.y] for p in view.pedestrians], dtype=float).reshape(-1, 2)
        if self._history:
            last_t, last = self._history[-1]
            if last_t != view.t - 1 or last.shape != positions.shape:
                self._history = []
        self._history.append((view.t, positions))
        del self._history[:-(VELOCITY_WINDOW + 1)]
        return positions

    def pedestrian_velocities(self, view: PolicyInput) -> Tuple[np.ndarray, np.ndarray]:
        """Two constant-velocity hypotheses per pedestrian: along the current heading, and the recent mean"""
        dt = self.config.simulation.dt
        headings = np.array([p.theta for p in view.pedestrians], dtype=float)
        direction = np.stack([np.cos(headings), np.sin(headings)], axis=1).reshape(-1, 2)
        if len(self._history) < 2:
            speed = np.full(len(headings), self.config.generation.speed_max)
            along = direction * speed[:, None]
            return along, along
        stacked = np.stack([p for _, p in self._history])
        steps = np.diff(stacked, axis=0)
        speed = np.hypot(steps[..., 0], steps[..., 1]).max(axis=0) / dt
        mean = (stacked[-1] - stacked[0]) / ((len(self._history) - 1) * dt)
        return direction * speed[:, None], mean

    def _footprint_cells(self, grid: OccupancyGrid) -> np.ndarray:
        if self._footprint is None or self._footprint[0] is not grid:
            self._footprint = (grid, grid.inflate(self.config.simulation.r_agent).cells)
        return self._footprint[1]

    def rollout(self, view: PolicyInput, actions: np.ndarray) -> np.ndarray:
        """Agent positions with each action held, shape (n_actions, horizon + 1, 2).

        Rotate-then-translate like the simulator; a step into an obstacle freezes the position.
        """
        sim = self.config.simulation
        grid = view.grid
        k = np.arange(1, self.horizon + 1)
        theta = view.agent.theta - np.outer(actions[:, 1], k) * sim.w_max * sim.dt
        step = (actions[:, 0] * sim.v_max * sim.dt)[:, None]
        path = np.empty((len(actions), self.horizon + 1, 2))
        path[:, 0] = view.agent.position
        path[:, 1:, 0] = view.agent.x + np.cumsum(step * np.cos(theta), axis=1)
        path[:, 1:, 1] = view.agent.y + np.cumsum(step * np.sin(theta), axis=1)

        cols = np.floor(path[:, 1:, 0] / grid.resolution).astype(int)
        rows = grid.height - 1 - np.floor(path[:, 1:, 1] / grid.resolution).astype(int)
        inside = (cols >= 0) & (cols < grid.width) & (rows >= 0) & (rows < grid.height)
        blocked = np.ones(cols.shape, dtype=bool)
        blocked[inside] = self._footprint_cells(grid)[rows[inside], cols[inside]]
        # The agent already stands in its own cell even when it grazes the footprint.
        start_row, start_col = grid.point_to_cell(view.agent.position)
        blocked &= ~((rows == start_row) & (cols == start_col))

        first = np.where(blocked.any(axis=1), blocked.argmax(axis=1) + 1, self.horizon + 1)
        index = np.minimum(np.arange(self.horizon + 1)[None, :], first[:, None] - 1)
        return np.take_along_axis(path, index[:, :, None], axis=1)

    def separation(self, view: PolicyInput, paths: np.ndarray) -> np.ndarray:
        """Distance to the nearest forecast pedestrian per action and step, shape (n_actions, horizon).

        Steps after the goal radius is reached are unbounded: the episode ends there.
        """
        sim = self.config.simulation
        positions = self._observe(view)
        times = np.arange(1, self.horizon + 1) * sim.dt
        forecasts = [positions[:, None, :] + v[:, None, :] * times[None, :, None]
                     for v in self.pedestrian_velocities(view)]
        crowd = np.concatenate(forecasts, axis=0)
        gaps = paths[:, None, 1:, :] - crowd[None, :, :, :]
        nearest = np.hypot(gaps[..., 0], gaps[..., 1]).min(axis=1)
        to_goal = np.hypot(paths[:, 1:, 0] - view.goal[0], paths[:, 1:, 1] - view.goal[1])
        arrived = np.logical_or.accumulate(to_goal < sim.goal_radius, axis=1)
        nearest[arrived] = np.inf
        return nearest

    def _goal_distance(self, view: PolicyInput, point: np.ndarray) -> float:
        try:
            return view.goal_field.distance_at((float(point[0]), float(point[1])))
        except GridQueryError:
            return math.inf

    def act(self, view: PolicyInput) -> Action:
        nominal = self.modulated(view)
        features = view.features
        if features is None or features.risk <= 0.0 or not view.pedestrians:
            self._observe(view)
            return nominal
        sim = self.config.simulation
        contact = sim.r_agent + sim.r_human
        candidates = [nominal] + self.window
        paths = self.rollout(view, np.array([a.to_list() for a in candidates], dtype=float))
        gap = self.separation(view, paths)
        closest = gap.min(axis=1)
        clear = closest >= contact + self.safety_margin
        if clear[0]:
            return nominal
        if clear.any():
            options = np.flatnonzero(clear)
            progress = [self._goal_distance(view, paths[i, -1]) for i in options]
            choice = int(options[int(np.argmin(progress))])
        else:
            hits = gap < contact
            time_to_contact = np.where(hits.any(axis=1), hits.argmax(axis=1), self.horizon)
            choice = max(range(len(candidates)),
                         key=lambda i: (bool(closest[i] >= contact), int(time_to_contact[i]),
                                        float(closest[i]), -i))
        self.logger.debug(f"t={view.t}: nominal {nominal} replaced by {candidates[choice]} "
                          f"(forecast gap {closest[choice]:.2f} m)")
        return candidates[choice]
