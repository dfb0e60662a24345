"""
Test Suite for the Social Navigation Lab
Unit and property tests for every module
"""

import heapq
import json
import math
import os
import shutil
import tempfile
import unittest
from dataclasses import replace

import numpy as np

from database import ResultsDatabase
from sn_baselines import GreedyPolicy, SocialPolicy, StationaryPolicy
from sn_config import ConfigError, ConfigManager, SocialNavConfig, SocialNavError, config_from_dict
from sn_encounters import (CURVE_BINS, EncounterAnalyzer, EncounterClass, EncounterParams,
                           general_direction, paths_intersect)
from sn_navmetrics import aggregate, episode_metrics, format_summary, run_metrics
from sn_policy import LossWeights, PolicyNetwork, TrainingBatch
from sn_scenario_generator import EpisodeGenerator, generate_map, validate_episode
from sn_simcore import (Action, Episode, EpisodeConstructionError, EpisodeSimulator, EpisodeStatus,
                        PedestrianPatrol, PedestrianSpec, SimState, StepOutcome, StepRecord, TrajectoryLog,
                        agent_step, check_termination, compute_reward, run_episode)
from sn_social_features import SocialFeatures, compute_features
from sn_training import (AdamOptimizer, CheckpointError, Trainer, aux_windows, gradient_check,
                         load_checkpoint, nstep_returns, read_training_log, save_checkpoint)
from sn_trajectory import (TrajectoryFormatError, TrajectoryStore, export_features_csv, read_episode_file,
                           trajectory_from_text, write_episode_file)
from sn_world import (GridQueryError, MapFormatError, OccupancyGrid, Pose, UnreachableError,
                      distance_field, geodesic_distance, line_of_sight, shortest_path, wrap_angle)


# Fixtures shared with the acceptance tests

def open_grid(width=100, height=100, resolution=0.1, walls=(), map_id='open'):
    """Empty grid; each wall (x_lo, x_hi, y_lo, y_hi) fills the cells whose centres it contains"""
    cells = np.zeros((height, width), dtype=bool)
    blank = OccupancyGrid(width, height, resolution, cells, map_id)
    for x_lo, x_hi, y_lo, y_hi in walls:
        for row in range(height):
            for col in range(width):
                cx, cy = blank.cell_center((row, col))
                if x_lo <= cx <= x_hi and y_lo <= cy <= y_hi:
                    cells[row, col] = True
    return OccupancyGrid(width, height, resolution, cells, map_id)


def straight_track(start, heading, step, n):
    return [(start[0] + step * t * math.cos(heading), start[1] + step * t * math.sin(heading))
            for t in range(n + 1)]


def synthetic_log(agent_track, agent_heading, ped_tracks, status=EpisodeStatus.TIMEOUT,
                  collided=None, lin_vel=1.0, goal=(9.55, 9.55), map_id='open'):
    """Hand-built trajectory log; a collision is reported on the last record"""
    n = len(agent_track)
    pedestrians = tuple(PedestrianSpec(tuple(track[0]), tuple(track[-1]), 0.5) for track in ped_tracks)
    episode = Episode(map_id, Pose(agent_track[0][0], agent_track[0][1], agent_heading), goal, pedestrians, 0)
    records = []
    for t in range(n):
        last = t == n - 1
        outcome = StepOutcome(i_human_coll=last and collided is not None,
                              collided_pedestrian=collided if last else None)
        records.append(StepRecord(
            t=t,
            agent=Pose(agent_track[t][0], agent_track[t][1], agent_heading),
            action=Action(lin_vel if t > 0 else 0.0, 0.0),
            pedestrians=[Pose(track[t][0], track[t][1], 0.0) for track in ped_tracks],
            outcome=outcome,
        ))
    if collided is not None:
        status = EpisodeStatus.HUMAN_COLLISION
    return TrajectoryLog(episode, records, status, policy_name='synthetic')


def frontal_log(collide=False):
    steps = 21 if collide else 15
    agent = straight_track((1.05, 5.05), 0.0, 0.05, steps)
    ped = straight_track((3.55, 5.05), math.pi, 0.05, steps)
    return synthetic_log(agent, 0.0, [ped], collided=0 if collide else None)


def oracle_distances(grid, source):
    """Plain float Dijkstra over 8-connected moves without corner cutting"""
    dist = {source: 0.0}
    heap = [(0.0, source)]
    done = set()
    while heap:
        d, cell = heapq.heappop(heap)
        if cell in done:
            continue
        done.add(cell)
        row, col = cell
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                nxt = (row + dr, col + dc)
                if not grid.is_free(nxt):
                    continue
                if dr and dc and not grid.is_free((row + dr, col)) and not grid.is_free((row, col + dc)):
                    continue
                nd = d + grid.resolution * (math.sqrt(2.0) if dr and dc else 1.0)
                if nd < dist.get(nxt, math.inf):
                    dist[nxt] = nd
                    heapq.heappush(heap, (nd, nxt))
    return dist


def random_grid(rng, max_size=30, density=0.3, resolution=0.1):
    width = int(rng.integers(3, max_size + 1))
    height = int(rng.integers(3, max_size + 1))
    cells = rng.random((height, width)) < density
    return OccupancyGrid(width, height, resolution, cells, 'random')


def small_policy_config(tasks=('risk', 'compass'), belief_dim=4):
    return config_from_dict({'policy': {'n_rays': 6, 'visual_dim': 5, 'pose_dim': 3, 'belief_dim': belief_dim,
                                        'action_embed_dim': 3, 'tasks': list(tasks)}})


def random_batch(network, rng, T=5, B=2, k=2):
    sectors = network.task_dims['compass']
    aux_mask = np.zeros((T, B), dtype=bool)
    aux_mask[:T - k] = rng.random((T - k, B)) < 0.7
    aux_mask[0, 0] = True
    starts = np.zeros((T, B), dtype=bool)
    starts[0] = True
    starts[3, 1] = True
    return TrainingBatch(
        rays=rng.random((T, B, network.n_rays)),
        pose=rng.uniform(-1, 1, (T, B, 5)),
        starts=starts,
        h0=rng.uniform(-0.5, 0.5, (B, network.n_beliefs, network.d)),
        raw_actions=rng.uniform(-1.5, 1.5, (T, B, 2)),
        mask=(rng.random((T, B)) < 0.8).astype(float),
        advantages=rng.standard_normal((T, B)),
        returns=rng.standard_normal((T, B)),
        aux_actions=rng.uniform(-1, 1, (T, B, k + 1, 2)),
        aux_targets={'risk': rng.random((T, B, k + 1, 1)), 'compass': rng.random((T, B, k + 1, sectors))},
        aux_mask=aux_mask,
    )


class TestWorld(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.grid = open_grid(20, 20)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_cell_convention(self):
        """Row 0 is the top of the map"""
        grid = OccupancyGrid(10, 5, 0.5, np.zeros(50, dtype=bool))
        self.assertEqual(grid.point_to_cell((0.1, 0.1)), (4, 0))
        self.assertEqual(grid.point_to_cell((4.9, 2.4)), (0, 9))
        self.assertEqual(grid.cell_center((0, 0)), (0.25, 2.25))

    def test_outside_is_wall(self):
        grid = open_grid(10, 10)
        self.assertFalse(grid.is_free((-1, 0)))
        self.assertFalse(grid.is_free((0, 10)))
        with self.assertRaises(GridQueryError):
            grid.point_to_cell((-0.1, 0.5))
        self.assertTrue(grid.disc_collides((0.1, 0.5), 0.2))
        self.assertFalse(grid.disc_collides((0.5, 0.5), 0.2))

    def test_map_file_round_trip(self):
        grid = open_grid(12, 8, walls=[(0.3, 0.6, 0.2, 0.5)])
        path = os.path.join(self.temp_dir, 'room.txt')
        grid.save(path)
        loaded = OccupancyGrid.load(path)
        self.assertEqual(loaded, grid)
        self.assertEqual(loaded.map_id, 'room')

    def test_malformed_maps(self):
        with self.assertRaises(MapFormatError):
            OccupancyGrid.from_text("3 2 0.1\n...\n.x.\n")
        with self.assertRaises(MapFormatError):
            OccupancyGrid.from_text("3 2 0.1\n...\n")
        with self.assertRaises(MapFormatError):
            OccupancyGrid.from_text("3 two 0.1\n...\n...\n")
        with self.assertRaises(MapFormatError):
            OccupancyGrid.load(os.path.join(self.temp_dir, 'missing.txt'))

    def test_wrap_angle(self):
        self.assertEqual(wrap_angle(math.pi), -math.pi)
        self.assertAlmostEqual(abs(wrap_angle(3 * math.pi)), math.pi)
        self.assertAlmostEqual(wrap_angle(-3 * math.pi / 2), math.pi / 2)
        for angle in (0.3, -2.9, 7.0, -11.5):
            once = wrap_angle(angle)
            self.assertEqual(wrap_angle(once), once)
            self.assertTrue(-math.pi <= once < math.pi)

    def test_geodesic_matches_dijkstra_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            grid = random_grid(rng, max_size=20)
            free = grid.free_cells()
            if len(free) < 2:
                continue
            source = free[int(rng.integers(len(free)))]
            oracle = oracle_distances(grid, source)
            field = distance_field(grid, grid.cell_center(source))
            for cell in free:
                expected = oracle.get(cell, math.inf)
                got = geodesic_distance(grid, grid.cell_center(source), grid.cell_center(cell))
                if math.isinf(expected):
                    self.assertTrue(math.isinf(got))
                    self.assertFalse(field.reachable(cell))
                else:
                    self.assertAlmostEqual(got, expected, places=9)
                    self.assertAlmostEqual(field.distance_to(cell), expected, places=9)

    def test_geodesic_symmetric_and_bounded(self):
        rng = np.random.default_rng(5)
        grid = random_grid(rng, max_size=25, density=0.2)
        free = grid.free_cells()
        for _ in range(40):
            a = grid.cell_center(free[int(rng.integers(len(free)))])
            b = grid.cell_center(free[int(rng.integers(len(free)))])
            forward = geodesic_distance(grid, a, b)
            self.assertEqual(forward, geodesic_distance(grid, b, a))
            if math.isfinite(forward):
                self.assertGreaterEqual(forward, math.hypot(b[0] - a[0], b[1] - a[1]) - 1e-9)

    def test_diagonal_needs_one_free_flank(self):
        both_blocked = OccupancyGrid(2, 2, 1.0, [False, True, True, False])
        self.assertTrue(math.isinf(geodesic_distance(both_blocked, (0.5, 1.5), (1.5, 0.5))))
        one_blocked = OccupancyGrid(2, 2, 1.0, [False, True, False, False])
        self.assertAlmostEqual(geodesic_distance(one_blocked, (0.5, 1.5), (1.5, 0.5)), math.sqrt(2.0))

    def test_shortest_path_is_a_valid_chain(self):
        rng = np.random.default_rng(8)
        checked = 0
        while checked < 10:
            grid = random_grid(rng, max_size=20, density=0.25)
            free = grid.free_cells()
            if len(free) < 2:
                continue
            a = grid.cell_center(free[0])
            b = grid.cell_center(free[-1])
            if math.isinf(geodesic_distance(grid, a, b)):
                with self.assertRaises(UnreachableError):
                    shortest_path(grid, a, b)
                continue
            path = shortest_path(grid, a, b)
            self.assertAlmostEqual(path.length, geodesic_distance(grid, a, b), places=9)
            cells = [grid.point_to_cell(p) for p in path.waypoints]
            for cell in cells:
                self.assertTrue(grid.is_free(cell))
            for (r0, c0), (r1, c1) in zip(cells, cells[1:]):
                self.assertLessEqual(max(abs(r1 - r0), abs(c1 - c0)), 1)
                if r0 != r1 and c0 != c1:
                    self.assertTrue(grid.is_free((r1, c0)) or grid.is_free((r0, c1)))
            checked += 1

    def test_unreachable_halves(self):
        grid = open_grid(20, 10, walls=[(0.95, 1.05, 0.0, 1.0)])
        self.assertTrue(math.isinf(geodesic_distance(grid, (0.25, 0.55), (1.75, 0.55))))
        with self.assertRaises(UnreachableError):
            shortest_path(grid, (0.25, 0.55), (1.75, 0.55))

    def test_line_of_sight(self):
        walled = open_grid(20, 20, walls=[(0.95, 1.05, 0.5, 1.5)])
        self.assertTrue(line_of_sight(self.grid, (0.15, 0.15), (1.85, 1.75)))
        self.assertFalse(line_of_sight(walled, (0.5, 1.0), (1.5, 1.0)))
        self.assertTrue(line_of_sight(walled, (0.5, 1.8), (1.5, 1.8)))
        with self.assertRaises(GridQueryError):
            line_of_sight(walled, (0.5, 1.0), (2.5, 1.0))
        rng = np.random.default_rng(3)
        for _ in range(200):
            a = tuple(rng.uniform(0.0, 2.0, 2))
            b = tuple(rng.uniform(0.0, 2.0, 2))
            self.assertEqual(line_of_sight(walled, a, b), line_of_sight(walled, b, a))

    def test_inflate_blocks_edges(self):
        inflated = self.grid.inflate(0.4)
        self.assertFalse(inflated.is_free((0, 0)))
        self.assertFalse(inflated.is_free((10, 3)))
        self.assertTrue(inflated.is_free((10, 10)))
        self.assertEqual(self.grid.inflate(0.0), self.grid)


class TestSocialFeatures(unittest.TestCase):
    def setUp(self):
        self.settings = SocialNavConfig().features

    def test_no_pedestrians(self):
        features = compute_features(Pose(1.0, 1.0, 0.3), [], self.settings)
        self.assertEqual(features.risk, 0.0)
        self.assertEqual(features.compass, (0.0,) * 8)

    def test_risk_is_linear_in_distance(self):
        agent = Pose(5.0, 5.0, 0.0)
        self.assertAlmostEqual(compute_features(agent, [Pose(6.0, 5.0)], self.settings).risk, 0.5)
        self.assertEqual(compute_features(agent, [Pose(7.5, 5.0)], self.settings).risk, 0.0)
        self.assertEqual(compute_features(agent, [Pose(5.0, 5.0)], self.settings).risk, 1.0)
        nearest = compute_features(agent, [Pose(6.5, 5.0), Pose(5.0, 4.5)], self.settings)
        self.assertAlmostEqual(nearest.risk, 0.75)

    def test_compass_sectors_are_clockwise(self):
        agent = Pose(5.0, 5.0, 0.0)
        expected = {(6.0, 5.0): 0, (5.0, 4.0): 2, (4.0, 5.0): 4, (5.0, 6.0): 6}
        for position, sector in expected.items():
            compass = compute_features(agent, [Pose(*position)], self.settings).compass
            self.assertAlmostEqual(compass[sector], 0.8)
            self.assertEqual(sum(1 for v in compass if v > 0), 1, f"{position} lit more than one sector")

    def test_compass_follows_heading(self):
        facing_north = Pose(5.0, 5.0, math.pi / 2)
        self.assertGreater(compute_features(facing_north, [Pose(5.0, 6.0)], self.settings).compass[0], 0.0)
        self.assertGreater(compute_features(facing_north, [Pose(6.0, 5.0)], self.settings).compass[2], 0.0)

    def _around(self, agent, bearings_and_distances):
        """Pedestrians at clockwise bearings from the agent heading"""
        return [Pose(agent.x + d * math.cos(agent.theta - b), agent.y + d * math.sin(agent.theta - b))
                for b, d in bearings_and_distances]

    def test_compass_is_rotation_equivariant(self):
        """Turning the agent and everyone around it together leaves the compass unchanged"""
        width = 2.0 * math.pi / 8
        placed = [(0.4 * width, 1.5), (2.5 * width, 2.5), (4.6 * width, 3.2), (6.3 * width, 4.0)]
        reference = compute_features(Pose(5.0, 5.0, 0.0), self._around(Pose(5.0, 5.0, 0.0), placed),
                                     self.settings)
        for turn in (0.7, 2.0, -1.3, math.pi):
            agent = Pose(5.0, 5.0, turn)
            rotated = compute_features(agent, self._around(agent, placed), self.settings)
            self.assertAlmostEqual(rotated.risk, reference.risk)
            for got, want in zip(rotated.compass, reference.compass):
                self.assertAlmostEqual(got, want)

    def test_heading_turn_of_one_sector_shifts_the_compass(self):
        """Turning only the agent 45 degrees counter-clockwise moves every person one sector clockwise"""
        width = 2.0 * math.pi / 8
        agent = Pose(5.0, 5.0, 0.3)
        pedestrians = self._around(agent, [(0.5 * width, 1.5), (2.5 * width, 2.5), (5.5 * width, 3.0)])
        before = compute_features(agent, pedestrians, self.settings).compass
        after = compute_features(Pose(5.0, 5.0, 0.3 + width), pedestrians, self.settings).compass
        for j in range(8):
            self.assertAlmostEqual(after[(j + 1) % 8], before[j])

    def test_compass_keeps_nearest_per_sector(self):
        agent = Pose(5.0, 5.0, 0.0)
        compass = compute_features(agent, [Pose(9.0, 5.1), Pose(6.0, 5.1), Pose(12.0, 5.0)],
                                   self.settings).compass
        self.assertAlmostEqual(compass[7], 1.0 - math.hypot(1.0, 0.1) / 5.0)

    def test_features_round_trip_dict(self):
        features = SocialFeatures(0.25, (0.0, 0.5, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0))
        self.assertEqual(SocialFeatures.from_dict(features.to_dict()), features)
        self.assertEqual(len(features.as_vector()), 9)


class TestSimulationCore(unittest.TestCase):
    def setUp(self):
        self.config = config_from_dict({'simulation': {'max_steps': 200}})
        self.sim = self.config.simulation
        self.grid = open_grid(50, 50, map_id='open5')

    def test_agent_step_kinematics(self):
        pose = Pose(2.05, 2.05, 0.0)
        moved, blocked = agent_step(pose, Action(1.0, 0.0), self.grid, 0.1, 0.5, math.pi / 2)
        self.assertFalse(blocked)
        self.assertAlmostEqual(moved.x, 2.1)
        self.assertAlmostEqual(moved.y, 2.05)
        turned, _ = agent_step(pose, Action(0.0, 1.0), self.grid, 0.1, 0.5, math.pi / 2)
        self.assertAlmostEqual(turned.theta, -math.pi / 20)
        self.assertEqual(turned.position, pose.position)

    def test_blocked_move_keeps_position(self):
        pose = Pose(4.78, 2.5, 0.0)
        moved, blocked = agent_step(pose, Action(1.0, 0.0), self.grid, 0.1, 0.5, math.pi / 2)
        self.assertTrue(blocked)
        self.assertEqual(moved.position, pose.position)

    def test_action_clamped(self):
        action = Action(3.0, -2.0)
        self.assertEqual(action.to_list(), [1.0, -1.0])
        with self.assertRaises(ValueError):
            Action(float('nan'), 0.0)

    def test_termination_priority(self):
        goal = (2.0, 2.0)
        at_goal = Pose(2.05, 2.0, 0.0)
        ped_on_agent = [Pose(2.2, 2.0)]
        status, hit = check_termination(at_goal, ped_on_agent, goal, self.sim.max_steps, self.sim)
        self.assertEqual((status, hit), (EpisodeStatus.HUMAN_COLLISION, 0))
        status, _ = check_termination(at_goal, [], goal, self.sim.max_steps, self.sim)
        self.assertEqual(status, EpisodeStatus.SUCCESS)
        status, _ = check_termination(Pose(1.0, 1.0), [], goal, self.sim.max_steps, self.sim)
        self.assertEqual(status, EpisodeStatus.TIMEOUT)
        status, _ = check_termination(Pose(1.0, 1.0), [], goal, 3, self.sim)
        self.assertEqual(status, EpisodeStatus.RUNNING)

    def test_closest_pedestrian_is_reported(self):
        agent = Pose(2.0, 2.0, 0.0)
        status, hit = check_termination(agent, [Pose(2.45, 2.0), Pose(2.1, 2.0)], (4.0, 4.0), 1, self.sim)
        self.assertEqual((status, hit), (EpisodeStatus.HUMAN_COLLISION, 1))

    def test_reward_terms(self):
        settings = self.config.reward
        prev = SimState(0, Pose(1.0, 1.0), [], 3.0)
        state = SimState(1, Pose(1.05, 1.0), [], 2.95, blocked=True)
        outcome = compute_reward(prev, state, Action(-1.0, 0.0), settings)
        self.assertAlmostEqual(outcome.progress, 0.05)
        self.assertAlmostEqual(outcome.collision_penalty, -0.04)
        self.assertTrue(outcome.i_coll and outcome.i_back)
        self.assertEqual(outcome.reward, outcome.progress + outcome.slack + outcome.collision_penalty
                         + outcome.success_bonus)
        success = compute_reward(prev, replace(state, blocked=False, status=EpisodeStatus.SUCCESS),
                                 Action(1.0, 0.0), settings)
        self.assertEqual(success.success_bonus, 10.0)
        lost = compute_reward(prev, replace(state, goal_distance=math.inf), Action(1.0, 0.0), settings)
        self.assertTrue(lost.goal_unreachable)
        self.assertEqual(lost.progress, 0.0)

    def test_patrol_back_and_forth(self):
        spec = PedestrianSpec((1.05, 2.55), (3.05, 2.55), 0.5, 0.0)
        patrol = PedestrianPatrol(spec, self.grid)
        self.assertAlmostEqual(patrol.length, 2.0)
        start = patrol.pose_at(0, 0.1)
        self.assertAlmostEqual(start.x, 1.05)
        self.assertAlmostEqual(patrol.pose_at(20, 0.1).x, 2.05)
        self.assertAlmostEqual(patrol.pose_at(40, 0.1).x, 3.05)
        back = patrol.pose_at(60, 0.1)
        self.assertAlmostEqual(back.x, 2.05)
        self.assertAlmostEqual(abs(back.theta), math.pi)
        self.assertAlmostEqual(patrol.pose_at(80, 0.1).x, 1.05)
        # Phase is a fraction of the whole out-and-back period.
        quarter = PedestrianPatrol(replace(spec, phase=0.25), self.grid).pose_at(0, 0.1)
        self.assertAlmostEqual(quarter.x, 2.05)
        self.assertAlmostEqual(quarter.theta, 0.0)
        self.assertAlmostEqual(PedestrianPatrol(replace(spec, phase=0.5), self.grid).pose_at(0, 0.1).x, 3.05)
        returning = PedestrianPatrol(replace(spec, phase=0.75), self.grid).pose_at(0, 0.1)
        self.assertAlmostEqual(returning.x, 2.05)
        self.assertAlmostEqual(abs(returning.theta), math.pi)

    def test_stationary_policy_times_out(self):
        config = config_from_dict({'simulation': {'max_steps': 20}})
        episode = Episode('open5', Pose(1.05, 1.05, 0.0), (3.95, 3.95))
        log = run_episode(episode, StationaryPolicy(), config, self.grid)
        self.assertEqual(log.status, EpisodeStatus.TIMEOUT)
        self.assertEqual(log.t_end, 20)
        self.assertEqual(len(log.records), 21)

    def test_greedy_reaches_goal(self):
        episode = Episode('open5', Pose(1.05, 1.05, 0.0), (3.95, 3.95))
        log = run_episode(episode, GreedyPolicy(self.config), self.config, self.grid)
        self.assertEqual(log.status, EpisodeStatus.SUCCESS)
        for record in log.records:
            o = record.outcome
            self.assertEqual(o.reward, o.progress + o.slack + o.collision_penalty + o.success_bonus)
        self.assertEqual(log.records[-1].outcome.success_bonus, 10.0)

    def test_return_telescopes_to_geodesic_progress(self):
        """A clean straight run earns geodesic(start, goal) + slack * T + success bonus, up to the goal radius"""
        start, goal = Pose(1.05, 2.55, 0.0), (4.05, 2.55)
        log = run_episode(Episode('open5', start, goal), GreedyPolicy(self.config), self.config, self.grid)
        self.assertEqual(log.status, EpisodeStatus.SUCCESS)
        steps = log.records[1:]
        self.assertEqual(sum(r.outcome.collision_penalty for r in steps), 0.0)
        total = sum(r.outcome.reward for r in steps)
        field = distance_field(self.grid, goal)
        end = log.records[-1].agent.position
        self.assertAlmostEqual(total, field.distance_at(start.position) - field.distance_at(end)
                               + self.config.reward.slack * log.t_end + 10.0, places=9)
        expected = geodesic_distance(self.grid, start.position, goal) - 0.002 * log.t_end + 10.0
        self.assertLessEqual(abs(total - expected), self.sim.goal_radius + 0.1)

    def test_no_record_after_terminal_status(self):
        """Only the last record is terminal, and stepping a finished episode fails"""
        ped = PedestrianSpec((3.95, 1.05), (1.05, 1.05), 0.5, 0.0)
        episode = Episode('open5', Pose(1.05, 1.05, 0.0), (4.05, 1.05), (ped,))
        simulator = EpisodeSimulator(episode, self.grid, self.config)
        simulator.reset()
        policy = GreedyPolicy(self.config)
        policy.reset(episode, np.random.default_rng(0))
        while not simulator.done:
            simulator.step(policy.act(simulator.view()))
        self.assertEqual(simulator.state.status, EpisodeStatus.HUMAN_COLLISION)
        terminal = [r.t for r in simulator.records if r.outcome.i_human_coll or r.outcome.i_succ]
        self.assertEqual(terminal, [simulator.state.t])
        self.assertEqual(simulator.records[-1].t, simulator.state.t)
        with self.assertRaises(SocialNavError):
            simulator.step(Action(1.0, 0.0))
        self.assertEqual(len(simulator.records), simulator.state.t + 1)

    def test_greedy_walks_into_pedestrian(self):
        ped = PedestrianSpec((3.95, 1.05), (1.05, 1.05), 0.5, 0.0)
        episode = Episode('open5', Pose(1.05, 1.05, 0.0), (4.05, 1.05), (ped,))
        log = run_episode(episode, GreedyPolicy(self.config), self.config, self.grid)
        self.assertEqual(log.status, EpisodeStatus.HUMAN_COLLISION)
        self.assertEqual(log.collision_time(0), log.t_end)

    def test_episode_construction_errors(self):
        walled = open_grid(50, 50, walls=[(2.0, 3.0, 2.0, 3.0)])
        with self.assertRaises(EpisodeConstructionError):
            EpisodeSimulator(Episode('x', Pose(2.55, 2.55), (1.0, 1.0)), walled, self.config)
        with self.assertRaises(EpisodeConstructionError):
            EpisodeSimulator(Episode('x', Pose(9.0, 1.0), (1.0, 1.0)), walled, self.config)

    def test_social_policy_modulates_greedy(self):
        episode = Episode('open5', Pose(1.05, 1.05, 0.0), (3.95, 3.95))
        simulator = EpisodeSimulator(episode, self.grid, self.config)
        simulator.reset()
        view = simulator.view()
        greedy, social = GreedyPolicy(self.config), SocialPolicy(self.config)
        greedy.reset(episode, np.random.default_rng(0))
        social.reset(episode, np.random.default_rng(0))
        self.assertEqual(social.act(view), greedy.act(view))
        # Someone close but walking away: halting is safe, so the agent halts and scans.
        close = replace(view, pedestrians=[Pose(1.8, 1.05, 0.0)], features=SocialFeatures(0.9, (0.0,) * 8))
        halted = social.act(close)
        self.assertEqual(halted.lin_vel, 0.0)
        self.assertNotEqual(halted.ang_vel, 0.0)
        moderate = replace(view, pedestrians=[Pose(2.5, 1.05, 0.0)], features=SocialFeatures(0.3, (0.0,) * 8))
        self.assertAlmostEqual(social.act(moderate).lin_vel, greedy.act(view).lin_vel * 0.7)

    def test_social_policy_backs_away_from_oncoming_pedestrian(self):
        """Head-on walker inside the risk radius: greedy keeps driving, social reverses"""
        episode = Episode('open5', Pose(2.0, 2.5, 0.0), (4.5, 2.5))
        simulator = EpisodeSimulator(episode, self.grid, self.config)
        simulator.reset()
        agent = episode.agent_start
        walker = [Pose(2.9, 2.5, math.pi)]
        view = replace(simulator.view(), pedestrians=walker,
                       features=compute_features(agent, walker, self.config.features))
        greedy, social = GreedyPolicy(self.config), SocialPolicy(self.config)
        greedy.reset(episode, np.random.default_rng(0))
        social.reset(episode, np.random.default_rng(0))
        self.assertGreater(greedy.act(view).lin_vel, 0.0)
        self.assertLess(social.act(view).lin_vel, 0.0)

    def test_social_policy_avoids_patrol_that_greedy_hits(self):
        """A patrol walking down the agent's line hits greedy but not the social baseline"""
        grid = open_grid(map_id='open10')
        ped = PedestrianSpec((7.05, 5.05), (3.05, 5.05), 0.5, 0.0)
        episode = Episode('open10', Pose(2.05, 5.05, 0.0), (8.05, 5.05), (ped,))
        config = config_from_dict({'simulation': {'max_steps': 300}})
        greedy = run_episode(episode, GreedyPolicy(config), config, grid)
        self.assertEqual(greedy.status, EpisodeStatus.HUMAN_COLLISION)
        social = run_episode(episode, SocialPolicy(config), config, grid)
        self.assertNotEqual(social.status, EpisodeStatus.HUMAN_COLLISION)


class TestScenarioGenerator(unittest.TestCase):
    def setUp(self):
        self.config = SocialNavConfig()
        self.grid = generate_map(1, self.config.generation, map_id='gen1')

    def test_map_is_deterministic(self):
        again = generate_map(1, self.config.generation, map_id='gen1')
        self.assertEqual(again, self.grid)
        self.assertEqual((self.grid.width, self.grid.height), (80, 80))
        self.assertFalse(self.grid.is_free((0, 0)))

    def test_episodes_are_valid_and_reproducible(self):
        generator = EpisodeGenerator(self.grid, self.config)
        episodes = generator.generate(5, seed=3)
        self.assertEqual(episodes, EpisodeGenerator(self.grid, self.config).generate(5, seed=3))
        for episode in episodes:
            self.assertEqual(validate_episode(episode, self.grid, self.config), [])
            self.assertEqual(len(episode.pedestrians), 3)
            self.assertGreaterEqual(geodesic_distance(generator.nav_grid, episode.agent_start.position,
                                                      episode.goal), 1.0)
            for ped in episode.pedestrians:
                initial = PedestrianPatrol(ped, generator.nav_grid).pose_at(0, 0.1)
                self.assertGreaterEqual(math.hypot(initial.x - episode.agent_start.x,
                                                   initial.y - episode.agent_start.y), 1.0)

    def test_validation_reports_problems(self):
        episode = Episode('gen1', Pose(0.05, 0.05), (4.0, 4.0),
                          (PedestrianSpec((2.0, 2.0), (3.0, 3.0), 0.9, 0.0),))
        problems = validate_episode(episode, self.grid, self.config)
        self.assertTrue(any('start' in p for p in problems))
        self.assertTrue(any('speed' in p for p in problems))


class TestTrajectoryStore(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.config = config_from_dict({'simulation': {'max_steps': 60}})
        self.grid = open_grid(50, 50, map_id='open5')

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def _log(self):
        ped = PedestrianSpec((1.05, 3.55), (3.55, 3.55), 0.45, 0.3)
        episode = Episode('open5', Pose(1.05, 1.05, 0.2), (3.95, 1.05), (ped,), seed=9)
        return run_episode(episode, SocialPolicy(self.config), self.config, self.grid)

    def test_log_round_trip(self):
        log = self._log()
        store = TrajectoryStore(self.temp_dir)
        path = store.save(log, 3)
        self.assertTrue(path.endswith('episode_00003.jsonl'))
        loaded = store.load(path)
        self.assertEqual(loaded.episode, log.episode)
        self.assertEqual(loaded.status, log.status)
        self.assertEqual(loaded.records, log.records)
        self.assertEqual(loaded.config, log.config)
        self.assertEqual(store.list_logs(), [path])

    def test_malformed_logs(self):
        with self.assertRaises(TrajectoryFormatError):
            trajectory_from_text('{"type": "header"\n')
        with self.assertRaises(TrajectoryFormatError):
            trajectory_from_text('{"type": "mystery"}\n')
        with self.assertRaises(TrajectoryFormatError):
            TrajectoryStore.load(os.path.join(self.temp_dir, 'missing.jsonl'))

    def test_episode_file_round_trip(self):
        episodes = [self._log().episode]
        path = os.path.join(self.temp_dir, 'episodes.json')
        write_episode_file(path, episodes, {'seed': 4})
        generator, loaded = read_episode_file(path)
        self.assertEqual(loaded, episodes)
        self.assertEqual(generator['seed'], 4)

    def test_feature_csv(self):
        log = self._log()
        path = os.path.join(self.temp_dir, 'features.csv')
        export_features_csv(log, path)
        with open(path) as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0].split(','), ['t', 'risk'] + [f'compass_{j}' for j in range(8)])
        self.assertEqual(len(lines), len(log.records) + 1)


class TestEncounters(unittest.TestCase):
    def setUp(self):
        self.grid = open_grid()
        self.analyzer = EncounterAnalyzer(EncounterParams(), v_max=0.5)

    def _classes(self, log, grid=None):
        return [e.clazz for e in self.analyzer.analyze_log(log, grid or self.grid)]

    def test_frontal_approach(self):
        self.assertEqual(self._classes(frontal_log()), [EncounterClass.FRONTAL])

    def test_person_following(self):
        agent = straight_track((1.05, 5.05), 0.0, 0.05, 15)
        ped = straight_track((2.55, 5.05), 0.0, 0.04, 15)
        self.assertEqual(self._classes(synthetic_log(agent, 0.0, [ped])), [EncounterClass.FOLLOWING])

    def test_intersection(self):
        agent = straight_track((1.05, 5.05), 0.0, 0.05, 20)
        ped = straight_track((2.0, 5.45), -math.pi / 2, 0.08, 20)
        self.assertEqual(self._classes(synthetic_log(agent, 0.0, [ped])), [EncounterClass.INTERSECTION])

    def test_blind_corner(self):
        grid = open_grid(walls=[(2.0, 2.1, 4.9, 5.2)])
        log = synthetic_log([(1.55, 5.05)] * 12, 0.0, [[(2.55, 5.05)] * 12], lin_vel=0.0)
        self.assertEqual(self._classes(log, grid), [EncounterClass.BLIND_CORNER])

    def test_long_detour_is_not_a_blind_corner(self):
        grid = open_grid(walls=[(2.0, 2.1, 4.5, 5.6)])
        log = synthetic_log([(1.55, 5.05)] * 12, 0.0, [[(2.55, 5.05)] * 12], lin_vel=0.0)
        encounters = self.analyzer.analyze_log(log, grid)
        self.assertEqual(len(encounters), 1)
        rules = self.analyzer.inclusion_rules(encounters[0], log, grid)
        self.assertFalse(rules[EncounterClass.BLIND_CORNER])
        self.assertEqual(encounters[0].clazz, EncounterClass.OTHER)

    def test_stationary_pedestrian_is_other(self):
        agent = straight_track((1.05, 5.05), 0.0, 0.05, 15)
        ped = [(3.05, 5.6)] * 16
        self.assertEqual(self._classes(synthetic_log(agent, 0.0, [ped])), [EncounterClass.OTHER])

    def test_short_or_rear_encounters_are_dropped(self):
        agent = straight_track((1.05, 5.05), 0.0, 0.05, 8)
        ped = straight_track((3.55, 5.05), math.pi, 0.05, 8)
        self.assertEqual(self._classes(synthetic_log(agent, 0.0, [ped])), [])
        agent = straight_track((3.05, 5.05), 0.0, 0.05, 15)
        behind = straight_track((1.55, 5.05), 0.0, 0.05, 15)
        self.assertEqual(self._classes(synthetic_log(agent, 0.0, [behind])), [])
        far = straight_track((8.05, 5.05), math.pi, 0.01, 15)
        agent = straight_track((1.05, 5.05), 0.0, 0.01, 15)
        self.assertEqual(self._classes(synthetic_log(agent, 0.0, [far])), [])

    def test_collision_marks_encounter(self):
        log = frontal_log(collide=True)
        encounters = self.analyzer.analyze_log(log, self.grid)
        self.assertEqual(len(encounters), 1)
        self.assertTrue(encounters[0].collided)
        self.assertEqual(encounters[0].t2, log.t_end)

    def test_survival_rate_and_curves(self):
        logs = [frontal_log(collide=i < 2) for i in range(10)]
        encounters = []
        for i, log in enumerate(logs):
            encounters.extend(self.analyzer.analyze_log(log, self.grid, log_index=i))
        report = self.analyzer.build_report(encounters, logs)
        frontal = report.per_class[EncounterClass.FRONTAL.value]
        self.assertEqual((frontal.count, frontal.collided), (10, 2))
        self.assertEqual(frontal.esr, 80.0)
        self.assertEqual(report.total, 10)
        self.assertEqual(report.per_class[EncounterClass.OTHER.value].esr, 0.0)
        curve = report.curves[EncounterClass.FRONTAL.value]
        self.assertEqual(len(curve['bins']), CURVE_BINS)
        self.assertAlmostEqual(curve['bins'][0], 0.5)
        self.assertAlmostEqual(curve['bins'][-1], 99.5)
        self.assertTrue(all(0.0 <= v <= 0.5 for v in curve['alv']))
        self.assertGreater(curve['ad'][0], curve['ad'][-1])
        self.assertAlmostEqual(frontal.alv, np.mean([np.mean([0.0] + [0.5] * (len(log.records) - 1))
                                                     for log in logs]))
        json.dumps(report.to_dict())

    def test_geometry_helpers(self):
        self.assertTrue(paths_intersect(np.array([[0.0, 0.0], [2.0, 2.0]]), np.array([[0.0, 2.0], [2.0, 0.0]])))
        self.assertFalse(paths_intersect(np.array([[0.0, 0.0], [2.0, 0.0]]), np.array([[0.0, 1.0], [2.0, 1.0]])))
        self.assertTrue(paths_intersect(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[1.0, 0.0], [1.0, 1.0]])))
        positions = np.array([[0.0, 0.0], [0.05, 0.0], [0.1, 0.0]])
        self.assertIsNone(general_direction(positions, 0, 2, 0.2))
        self.assertAlmostEqual(general_direction(positions, 0, 2, 0.05), 0.0)

    def test_params_validation(self):
        with self.assertRaises(ValueError):
            EncounterParams(t_min=0)
        with self.assertRaises(ValueError):
            EncounterParams(t_front=12, t_min=10)


class TestNavigationMetrics(unittest.TestCase):
    def setUp(self):
        self.grid = open_grid()

    def test_spl(self):
        straight = straight_track((1.05, 5.05), 0.0, 0.05, 40)
        log = synthetic_log(straight, 0.0, [], status=EpisodeStatus.SUCCESS, goal=(3.05, 5.05))
        metrics = episode_metrics(log, self.grid)
        self.assertTrue(metrics.success)
        self.assertAlmostEqual(metrics.path_length, 2.0)
        self.assertAlmostEqual(metrics.spl, 1.0)
        detour = (straight_track((1.05, 5.05), math.pi / 2, 0.05, 20)
                  + straight_track((1.05, 6.05), 0.0, 0.05, 40)[1:]
                  + straight_track((3.05, 6.05), -math.pi / 2, 0.05, 20)[1:])
        metrics = episode_metrics(synthetic_log(detour, 0.0, [], status=EpisodeStatus.SUCCESS,
                                                goal=(3.05, 5.05)), self.grid)
        self.assertAlmostEqual(metrics.spl, 0.5)
        failed = episode_metrics(synthetic_log(straight, 0.0, [], goal=(3.05, 5.05)), self.grid)
        self.assertEqual(failed.spl, 0.0)
        self.assertTrue(failed.timeout)

    def test_aggregate_uses_population_std(self):
        straight = straight_track((1.05, 5.05), 0.0, 0.05, 40)
        win = episode_metrics(synthetic_log(straight, 0.0, [], status=EpisodeStatus.SUCCESS,
                                            goal=(3.05, 5.05)), self.grid)
        loss = episode_metrics(synthetic_log(straight, 0.0, [], goal=(3.05, 5.05)), self.grid)
        summary = aggregate([[win, win], [loss, loss]])
        self.assertEqual(summary['success_pct'], {'mean': 50.0, 'std': 50.0})
        self.assertEqual(summary['timeout_pct']['mean'], 50.0)
        self.assertEqual(summary['n_episodes'], 4)
        self.assertEqual(len(format_summary(summary)), 5)
        self.assertEqual(run_metrics([win, loss, loss])['success_pct'], 100.0 / 3)

    def test_empty_runs(self):
        summary = aggregate([[]])
        self.assertEqual(summary['n_episodes'], 0)
        self.assertEqual(summary['spl'], {'mean': 0.0, 'std': 0.0})
        self.assertEqual(aggregate([])['success_pct'], {'mean': 0.0, 'std': 0.0})


class TestConfigManager(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.config_file = os.path.join(self.temp_dir, "socnav.json")

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_defaults_are_valid(self):
        manager = ConfigManager()
        validation = manager.validate_config()
        self.assertTrue(validation['valid'])
        self.assertEqual(validation['errors'], [])
        self.assertEqual(manager.get_config().simulation.max_steps, 500)
        self.assertEqual(manager.get_config().encounters.t_min, 10)

    def test_invalid_values_are_reported(self):
        manager = ConfigManager()
        manager.update_config({'simulation': {'dt': 0.0}, 'features': {'compass_radius': 1.0}})
        validation = manager.validate_config()
        self.assertFalse(validation['valid'])
        self.assertEqual(len(validation['errors']), 2)
        with self.assertRaises(ConfigError):
            manager.require_valid()

    def test_unknown_keys_rejected(self):
        with self.assertRaises(ConfigError):
            config_from_dict({'simulation': {'warp': 9}})
        with self.assertRaises(ConfigError):
            config_from_dict({'extras': {}})

    def test_file_and_environment_precedence(self):
        with open(self.config_file, 'w') as f:
            json.dump({'seed': 4, 'simulation': {'max_steps': 300}}, f)
        manager = ConfigManager(self.config_file)
        self.assertEqual(manager.get_config().seed, 4)
        manager.apply_environment_overrides({'SOCNAV_SEED': '9', 'SOCNAV_V_MAX': '0.4'})
        config = manager.get_config()
        self.assertEqual((config.seed, config.simulation.v_max, config.simulation.max_steps), (9, 0.4, 300))
        with self.assertRaises(ConfigError):
            manager.apply_environment_overrides({'SOCNAV_JOBS': 'many'})

    def test_run_section(self):
        """Command inputs live in the run section and stay out of embedded output configs"""
        manager = ConfigManager()
        manager.apply_environment_overrides({'SOCNAV_POLICY': 'social', 'SOCNAV_N_EPISODES': '5',
                                             'SOCNAV_DETERMINISTIC': 'true'})
        config = manager.get_config()
        self.assertEqual((config.run.policy, config.run.n_episodes, config.run.deterministic), ('social', 5, True))
        self.assertNotIn('run', config.output_dict())
        self.assertIn('run', config.to_dict())
        manager.update_config({'run': {'n_episodes': -1}})
        self.assertIn("run.n_episodes must be non-negative", manager.validate_config()['errors'])

    def test_save_and_reload(self):
        manager = ConfigManager()
        manager.update_config({'policy': {'tasks': ['risk']}})
        manager.save_config(self.config_file)
        reloaded = ConfigManager(self.config_file).get_config()
        self.assertEqual(reloaded.policy.tasks, ['risk'])
        self.assertEqual(reloaded, manager.get_config())

    def test_malformed_file(self):
        with open(self.config_file, 'w') as f:
            f.write('{not json')
        with self.assertRaises(ConfigError):
            ConfigManager(self.config_file)
        with self.assertRaises(ConfigError):
            ConfigManager(os.path.join(self.temp_dir, 'absent.json'))


class TestResultsDatabase(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.db = ResultsDatabase(os.path.join(self.temp_dir, "results.db"))

    def tearDown(self):
        self.db.close()
        shutil.rmtree(self.temp_dir)

    def test_run_summary_and_class_statistics(self):
        grid = open_grid()
        analyzer = EncounterAnalyzer()
        logs = [frontal_log(collide=i < 2) for i in range(10)]
        encounters = [e for i, log in enumerate(logs) for e in analyzer.analyze_log(log, grid, i)]
        metrics = [episode_metrics(log, grid) for log in logs]
        run_id = self.db.add_run('frontal', policy='synthetic', config=SocialNavConfig().to_dict())
        self.assertEqual(self.db.add_episodes(run_id, metrics), 10)
        self.assertEqual(self.db.add_encounters(run_id, encounters), 10)
        summary = self.db.run_summary(run_id)
        self.assertEqual(summary['n_episodes'], 10)
        self.assertAlmostEqual(summary['h_collision_pct'], 20.0)
        self.assertAlmostEqual(summary['timeout_pct'], 80.0)
        stats = self.db.class_statistics(run_id)
        self.assertEqual(stats[EncounterClass.FRONTAL.value], {'count': 10, 'collided': 2, 'esr': 80.0})
        self.assertEqual(len(self.db.get_runs()), 1)
        rows = self.db.execute_query("SELECT COUNT(*) AS n FROM episodes WHERE run_id = ?", (run_id,))
        self.assertEqual(rows[0]['n'], 10)

    def test_empty_run(self):
        run_id = self.db.add_run('empty')
        self.assertEqual(self.db.run_summary(run_id)['success_pct'], 0.0)
        self.assertEqual(self.db.class_statistics(run_id), {})


class TestPolicyNetwork(unittest.TestCase):
    def test_gradients_match_finite_differences(self):
        network = PolicyNetwork(small_policy_config(), seed=2)
        batch = random_batch(network, np.random.default_rng(4))
        result = gradient_check(network, batch, LossWeights(entropy_coef=0.01), np.random.default_rng(1))
        self.assertLess(result['max_relative_error'], 1e-3, result['per_block'])
        self.assertEqual(result['checked'], sum(min(3, v.size) for v in network.params.values()))

    def test_single_task_has_one_belief(self):
        network = PolicyNetwork(small_policy_config(tasks=['risk']))
        self.assertEqual(network.n_beliefs, 1)
        self.assertNotIn('reg_compass.Wo', network.params)
        self.assertEqual(PolicyNetwork(small_policy_config(tasks=[])).n_beliefs, 1)

    def test_step_outputs(self):
        network = PolicyNetwork(small_policy_config(), seed=0)
        rng = np.random.default_rng(0)
        out = network.step(rng.random((3, 6)), rng.random((3, 5)), network.initial_state(3))
        self.assertEqual(out['mu'].shape, (3, 2))
        self.assertTrue(np.all(out['sigma'] > 0))
        np.testing.assert_allclose(out['weights'].sum(axis=1), 1.0)
        preds = network.regressor_predict('compass', out['h'][0, 1], np.zeros((3, 2)))
        self.assertEqual(preds.shape, (3, 8))

    def test_adam_with_zero_rate_keeps_params(self):
        network = PolicyNetwork(small_policy_config(), seed=3)
        before = {k: v.copy() for k, v in network.params.items()}
        batch = random_batch(network, np.random.default_rng(6))
        _, grads, _ = network.loss_and_gradients(batch, LossWeights())
        AdamOptimizer(network.params, 0.0).step(network.params, grads)
        for name, value in before.items():
            np.testing.assert_array_equal(network.params[name], value)


class TestTraining(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.config = config_from_dict({
            'policy': {'n_rays': 6, 'visual_dim': 5, 'pose_dim': 3, 'belief_dim': 4, 'action_embed_dim': 3},
            'training': {'num_envs': 2, 'n_steps': 6, 'aux_horizon': 2, 'checkpoint_interval': 1, 'seed': 5},
            'generation': {'map_width': 40, 'map_height': 40, 'n_pedestrians': 2},
            'simulation': {'max_steps': 40},
        })
        self.grid = generate_map(2, self.config.generation, map_id='train2')
        self.checkpoint = os.path.join(self.temp_dir, 'ckpt.json')
        self.log_path = os.path.join(self.temp_dir, 'train.csv')

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_returns_and_windows(self):
        rewards = np.array([[1.0], [1.0], [1.0]])
        dones = np.array([[0.0], [1.0], [0.0]])
        returns = nstep_returns(rewards, dones, np.array([10.0]), 0.5)
        np.testing.assert_allclose(returns[:, 0], [1.5, 1.0, 6.0])
        features = np.arange(12, dtype=float).reshape(4, 1, 3)
        actions = np.zeros((4, 1, 2))
        breaks = np.array([[False], [True], [False], [False]])
        _, aux_features, aux_mask = aux_windows(features, actions, breaks, 1)
        np.testing.assert_array_equal(aux_mask[:, 0], [True, False, True, False])
        np.testing.assert_array_equal(aux_features[2, 0, 1], features[3, 0])

    def test_train_checkpoint_and_resume(self):
        trainer = Trainer(self.config, [self.grid], self.checkpoint, self.log_path)
        trainer.train(2)
        self.assertEqual(trainer.update, 2)
        network, document = load_checkpoint(self.checkpoint)
        self.assertEqual(document['update'], 2)
        for name, value in trainer.network.params.items():
            np.testing.assert_array_equal(network.params[name], value)

        resumed = Trainer(self.config, [self.grid], self.checkpoint, self.log_path)
        resumed.resume()
        resumed.train(1)
        rows = read_training_log(self.log_path)
        self.assertEqual([row['update'] for row in rows], [1.0, 2.0, 3.0])
        self.assertEqual(load_checkpoint(self.checkpoint)[1]['update'], 3)

    def test_training_is_reproducible(self):
        first = Trainer(self.config, [self.grid]).train(2)
        second = Trainer(self.config, [self.grid]).train(2)
        for name, value in first.params.items():
            np.testing.assert_array_equal(second.params[name], value)

    def test_checkpoint_rejects_foreign_files(self):
        with open(self.checkpoint, 'w') as f:
            json.dump({'format': 'other'}, f)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.checkpoint)
        network = PolicyNetwork(self.config, seed=1)
        save_checkpoint(self.checkpoint, network)
        loaded, _ = load_checkpoint(self.checkpoint)
        self.assertEqual(loaded.tasks, network.tasks)


if __name__ == '__main__':
    test_classes = [
        TestWorld,
        TestSocialFeatures,
        TestSimulationCore,
        TestScenarioGenerator,
        TestTrajectoryStore,
        TestEncounters,
        TestNavigationMetrics,
        TestConfigManager,
        TestResultsDatabase,
        TestPolicyNetwork,
        TestTraining,
    ]

    test_suite = unittest.TestSuite()
    for test_class in test_classes:
        test_suite.addTests(unittest.TestLoader().loadTestsFromTestCase(test_class))

    result = unittest.TextTestRunner(verbosity=2).run(test_suite)

    print("\n" + "=" * 50)
    print(f"Tests run: {result.testsRun}")
    print(f"Failures: {len(result.failures)}")
    print(f"Errors: {len(result.errors)}")
