"""
Scenario Generator for the Social Navigation Lab
Procedural indoor maps and seeded episodes with patrolling pedestrians
"""

import logging
import math
from typing import Any, Dict, List, Optional

import numpy as np

from sn_config import GenerationSettings, SocialNavConfig, SocialNavError
from sn_simcore import Episode, EpisodeConstructionError, PedestrianPatrol, PedestrianSpec
from sn_world import DistanceField, OccupancyGrid, Pose, euclidean_distance, geodesic_distance

logger = logging.getLogger(__name__)

WALL_THICKNESS = 2
DOOR_WIDTH_M = 1.4
MIN_PATROL_LENGTH_M = 1.0


class GenerationError(SocialNavError):
    """No valid map or episode could be sampled"""


def _connected(cells: np.ndarray, resolution: float, clearance: float) -> bool:
    """True if the clearance-inflated free space forms one non-empty region"""
    height, width = cells.shape
    nav = OccupancyGrid(width, height, resolution, cells).inflate(clearance)
    free = nav.free_cells()
    if not free:
        return False
    field = DistanceField(nav, free[0])
    return int(np.count_nonzero(field.axial >= 0)) == len(free)


def generate_map(seed: int, settings: Optional[GenerationSettings] = None, clearance: float = 0.4,
                 map_id: Optional[str] = None) -> OccupancyGrid:
    """Rooms split by thick walls with doorways, plus box furniture; same seed gives the same map"""
    settings = settings or GenerationSettings()
    rng = np.random.default_rng(seed)
    width, height, res = settings.map_width, settings.map_height, settings.map_resolution
    door = max(int(round(DOOR_WIDTH_M / res)), 3)
    margin = door // 2 + WALL_THICKNESS
    cells = np.zeros((height, width), dtype=bool)
    cells[0, :] = cells[-1, :] = cells[:, 0] = cells[:, -1] = True

    if width >= 4 * door and height > 2 * margin + door:
        x = int(rng.integers(width * 2 // 5, width * 3 // 5))
        cells[:, x:x + WALL_THICKNESS] = True
        y0 = int(rng.integers(margin, height - margin - door))
        cells[y0:y0 + door, x:x + WALL_THICKNESS] = False

        if height >= 4 * door:
            y = int(rng.integers(height * 2 // 5, height * 3 // 5))
            left = bool(rng.integers(0, 2))
            lo, hi = (1, x) if left else (x + WALL_THICKNESS, width - 1)
            clear_of_door = not (y0 - margin - WALL_THICKNESS <= y <= y0 + door + margin)
            if clear_of_door and hi - lo > door + 2 * margin:
                cells[y:y + WALL_THICKNESS, lo:hi] = True
                x0 = int(rng.integers(lo + margin, hi - margin - door))
                cells[y:y + WALL_THICKNESS, x0:x0 + door] = False

    if not _connected(cells, res, clearance):
        raise GenerationError(f"Map seed {seed}: room layout leaves disconnected free space")

    placed = 0
    for _ in range(int(rng.integers(2, 6))):
        h, w = (int(v) for v in rng.integers(3, 9, size=2))
        r = int(rng.integers(1, max(height - h - 1, 2)))
        c = int(rng.integers(1, max(width - w - 1, 2)))
        candidate = cells.copy()
        candidate[r:r + h, c:c + w] = True
        if _connected(candidate, res, clearance):
            cells = candidate
            placed += 1

    grid = OccupancyGrid(width, height, res, cells, map_id or f"map_{seed:04d}")
    logger.info(f"Generated map {grid.map_id}: {width}x{height} cells, {placed} furniture boxes, "
                f"{int(np.count_nonzero(~cells))} free cells")
    return grid


class EpisodeGenerator:
    """Samples episodes on one map; start, goal and patrols come from the inflated navigation grid"""

    def __init__(self, grid: OccupancyGrid, config: Optional[SocialNavConfig] = None,
                 nav_grid: Optional[OccupancyGrid] = None):
        self.grid = grid
        self.config = config or SocialNavConfig()
        self.settings = self.config.generation
        self.nav_grid = nav_grid if nav_grid is not None else grid.inflate(self.config.simulation.clearance)
        self.free_cells = self.nav_grid.free_cells()
        self.logger = logging.getLogger(__name__)

    def _sample_point(self, rng: np.random.Generator):
        cell = self.free_cells[int(rng.integers(0, len(self.free_cells)))]
        return self.nav_grid.cell_center(cell)

    def _sample_pedestrian(self, rng: np.random.Generator, agent_start: Pose) -> Optional[PedestrianSpec]:
        start = self._sample_point(rng)
        end = self._sample_point(rng)
        if euclidean_distance(start, end) < MIN_PATROL_LENGTH_M:
            return None
        if not math.isfinite(geodesic_distance(self.nav_grid, start, end)):
            return None
        speed = float(rng.uniform(self.settings.speed_min, self.settings.speed_max))
        phase = float(rng.uniform(0.0, 1.0))
        spec = PedestrianSpec(start, end, speed, phase)
        try:
            initial = PedestrianPatrol(spec, self.nav_grid).pose_at(0, self.config.simulation.dt)
        except EpisodeConstructionError:
            return None
        if euclidean_distance(initial.position, agent_start.position) < self.settings.min_pedestrian_separation:
            return None
        return spec

    def generate_episode(self, rng: np.random.Generator, n_pedestrians: Optional[int] = None) -> Episode:
        n_pedestrians = self.settings.n_pedestrians if n_pedestrians is None else n_pedestrians
        if len(self.free_cells) < 2:
            raise GenerationError(f"Map {self.grid.map_id} has fewer than two navigable cells")
        for _ in range(self.settings.max_attempts):
            start = self._sample_point(rng)
            goal = self._sample_point(rng)
            geodesic = geodesic_distance(self.nav_grid, start, goal)
            if not math.isfinite(geodesic) or geodesic < self.settings.min_start_goal_geodesic:
                continue
            agent_start = Pose(start[0], start[1], float(rng.uniform(-math.pi, math.pi)))
            pedestrians: List[PedestrianSpec] = []
            for _ in range(self.settings.max_attempts):
                if len(pedestrians) == n_pedestrians:
                    break
                spec = self._sample_pedestrian(rng, agent_start)
                if spec is not None:
                    pedestrians.append(spec)
            if len(pedestrians) < n_pedestrians:
                raise GenerationError(f"Could not place {n_pedestrians} pedestrians on {self.grid.map_id}")
            return Episode(map_id=self.grid.map_id, agent_start=agent_start, goal=goal,
                           pedestrians=tuple(pedestrians),
                           seed=int(rng.integers(0, 2 ** 63 - 1)))
        raise GenerationError(f"No valid start/goal pair on {self.grid.map_id} after "
                              f"{self.settings.max_attempts} attempts")

    def generate(self, n: int, seed: int, n_pedestrians: Optional[int] = None) -> List[Episode]:
        """Episode i draws from its own stream seeded by (seed, i)"""
        episodes = [self.generate_episode(np.random.default_rng([seed, i]), n_pedestrians)
                    for i in range(n)]
        self.logger.info(f"Generated {len(episodes)} episodes on {self.grid.map_id} (seed {seed})")
        return episodes

    def metadata(self, seed: int, n: int, n_pedestrians: Optional[int] = None) -> Dict[str, Any]:
        return {'seed': seed, 'n': n, 'map_id': self.grid.map_id,
                'n_pedestrians': self.settings.n_pedestrians if n_pedestrians is None else n_pedestrians,
                'generation': dict(vars(self.settings)),
                'clearance': self.config.simulation.clearance}


def generate_episode(grid: OccupancyGrid, rng: np.random.Generator, n_pedestrians: int,
                     config: Optional[SocialNavConfig] = None) -> Episode:
    return EpisodeGenerator(grid, config).generate_episode(rng, n_pedestrians)


def validate_episode(episode: Episode, grid: OccupancyGrid,
                     config: Optional[SocialNavConfig] = None) -> List[str]:
    """Problems that would make the episode invalid; empty when it passes"""
    config = config or SocialNavConfig()
    gen = config.generation
    problems = []
    for label, point in (('start', episode.agent_start.position), ('goal', episode.goal)):
        if not grid.in_bounds(point) or not grid.is_free(grid.point_to_cell(point)):
            problems.append(f"{label} {point} is not a free cell")
    if not problems and not math.isfinite(geodesic_distance(grid, episode.agent_start.position, episode.goal)):
        problems.append("goal unreachable from start")
    for i, ped in enumerate(episode.pedestrians):
        if not gen.speed_min <= ped.speed <= gen.speed_max:
            problems.append(f"pedestrian {i} speed {ped.speed} outside [{gen.speed_min}, {gen.speed_max}]")
        if not 0.0 <= ped.phase < 1.0:
            problems.append(f"pedestrian {i} phase {ped.phase} outside [0, 1)")
        try:
            if not math.isfinite(geodesic_distance(grid, ped.start, ped.end)):
                problems.append(f"pedestrian {i} patrol unreachable")
        except SocialNavError as e:
            problems.append(f"pedestrian {i} patrol invalid: {e}")
    return problems
