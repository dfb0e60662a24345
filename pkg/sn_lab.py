"""
Social Navigation Lab - Main Orchestrator
Ties maps, episode generation, batch simulation, evaluation, rendering and training together
"""

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple

from database import ResultsDatabase
from sn_baselines import GreedyPolicy, SocialPolicy, StationaryPolicy
from sn_config import ConfigError, SocialNavConfig
from sn_encounters import REPORT_CLASSES, EncounterAnalyzer, EncounterParams, EncounterReport
from sn_navmetrics import aggregate, episode_metrics, format_summary
from sn_policy import LearnedPolicy
from sn_render import render_log
from sn_scenario_generator import EpisodeGenerator, generate_map, validate_episode
from sn_simcore import Episode, Policy, TrajectoryLog, run_episode
from sn_training import Trainer, load_checkpoint
from sn_trajectory import (TrajectoryStore, atomic_write_text, export_features_csv, read_episode_file,
                           write_episode_file)
from sn_world import OccupancyGrid

logger = logging.getLogger(__name__)

SCRIPTED_POLICIES = {
    'greedy': GreedyPolicy,
    'social': SocialPolicy,
    'stationary': StationaryPolicy,
}


def make_policy(spec: str, config: SocialNavConfig, deterministic: bool = False) -> Policy:
    """'greedy', 'social', 'stationary', or the path of a training checkpoint"""
    if spec in SCRIPTED_POLICIES:
        factory = SCRIPTED_POLICIES[spec]
        return factory() if factory is StationaryPolicy else factory(config)
    if not os.path.exists(spec):
        raise ConfigError(f"Unknown policy {spec!r}: expected one of {sorted(SCRIPTED_POLICIES)} "
                          f"or a checkpoint path")
    network, _ = load_checkpoint(spec)
    return LearnedPolicy(network, deterministic=deterministic)


@lru_cache(maxsize=16)
def _load_grids(map_path: str, clearance: float) -> Tuple[OccupancyGrid, OccupancyGrid]:
    grid = OccupancyGrid.load(map_path)
    return grid, grid.inflate(clearance)


def _simulate_one(task: Tuple[int, Episode, str, str, SocialNavConfig, str, bool]) -> Tuple[int, str, str]:
    """Run one episode and write its log; module level so worker processes can import it"""
    index, episode, map_path, policy_spec, config, out_dir, deterministic = task
    grid, nav_grid = _load_grids(map_path, config.simulation.clearance)
    policy = make_policy(policy_spec, config, deterministic)
    log = run_episode(episode, policy, config, grid, nav_grid)
    log.map_file = map_path
    store = TrajectoryStore(out_dir)
    path = store.save(log, index)
    export_features_csv(log, store.features_path_for(index))
    return index, path, log.status.value


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def format_class_table(report: EncounterReport) -> List[str]:
    lines = [f"{'Class':<18}{'Count':>7}{'ESR %':>9}{'ALV m/s':>10}{'AD m':>8}"]
    for clazz in REPORT_CLASSES:
        stats = report.per_class[clazz.value]
        lines.append(f"{clazz.value:<18}{stats.count:>7d}{stats.esr:>9.2f}{stats.alv:>10.3f}{stats.ad:>8.2f}")
    lines.append(f"{'Total':<18}{report.total:>7d}")
    return lines


class SocialNavLab:
    def __init__(self, config: Optional[SocialNavConfig] = None):
        self.config = config or SocialNavConfig()
        self.logger = logging.getLogger(__name__)

    def load_map(self, map_path: str) -> Tuple[OccupancyGrid, OccupancyGrid]:
        """Raw grid and its clearance-inflated navigation grid"""
        return _load_grids(os.path.abspath(map_path), self.config.simulation.clearance)

    def _grid_for_log(self, log: TrajectoryLog, log_path: str, map_path: Optional[str]) -> OccupancyGrid:
        candidate = map_path or log.map_file
        if not candidate:
            raise ConfigError(f"{log_path} does not name its map; pass a map explicitly")
        if not os.path.isabs(candidate) and not os.path.exists(candidate):
            candidate = os.path.join(os.path.dirname(log_path), candidate)
        return self.load_map(candidate)[0]

    def make_map(self, seed: int, path: str, map_id: Optional[str] = None) -> Dict[str, Any]:
        map_id = map_id or os.path.splitext(os.path.basename(path))[0]
        grid = generate_map(seed, self.config.generation, self.config.simulation.clearance, map_id)
        atomic_write_text(path, grid.to_text())
        return {'path': path, 'map_id': grid.map_id, 'width': grid.width, 'height': grid.height,
                'free_cells': len(grid.free_cells())}

    def generate(self, map_path: str, n: int, seed: int, out_path: str,
                 n_pedestrians: Optional[int] = None) -> Dict[str, Any]:
        grid, nav_grid = self.load_map(map_path)
        generator = EpisodeGenerator(grid, self.config, nav_grid)
        episodes = generator.generate(n, seed, n_pedestrians)
        invalid = {i: problems for i, episode in enumerate(episodes)
                   if (problems := validate_episode(episode, grid, self.config))}
        if invalid:
            self.logger.warning(f"{len(invalid)} generated episodes failed validation: {invalid}")
        metadata = generator.metadata(seed, n, n_pedestrians)
        metadata['config'] = self.config.output_dict()
        write_episode_file(out_path, episodes, metadata)
        self.logger.info(f"Wrote {len(episodes)} episodes to {out_path}")
        return {'path': out_path, 'episodes': len(episodes), 'invalid': len(invalid)}

    def simulate(self, map_path: str, episodes_path: str, policy_spec: str, out_dir: str,
                 jobs: Optional[int] = None, deterministic: bool = False) -> Dict[str, Any]:
        """One log per episode; the same logs whatever the number of jobs"""
        jobs = jobs or self.config.jobs
        map_path = os.path.abspath(map_path)
        self.load_map(map_path)
        make_policy(policy_spec, self.config, deterministic)
        _, episodes = read_episode_file(episodes_path)
        os.makedirs(out_dir, exist_ok=True)
        tasks = [(i, episode, map_path, policy_spec, self.config, out_dir, deterministic)
                 for i, episode in enumerate(episodes)]
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_simulate_one, tasks))
        else:
            results = [_simulate_one(task) for task in tasks]
        statuses: Dict[str, int] = {}
        for _, _, status in results:
            statuses[status] = statuses.get(status, 0) + 1
        self.logger.info(f"Simulated {len(results)} episodes with {policy_spec} ({jobs} jobs): {statuses}")
        return {'out_dir': out_dir, 'logs': [path for _, path, _ in results], 'statuses': statuses}

    def evaluate(self, run_dirs: Sequence[str], out_dir: str, map_path: Optional[str] = None,
                 label: Optional[str] = None) -> Dict[str, Any]:
        """Navigation metrics per run plus the encounter report over every log of every run"""
        analyzer = EncounterAnalyzer(EncounterParams.from_settings(self.config.encounters),
                                     self.config.simulation.v_max)
        all_logs: List[TrajectoryLog] = []
        all_encounters = []
        runs, episode_rows, run_encounters = [], [], []
        for run_number, run_dir in enumerate(run_dirs):
            store = TrajectoryStore(run_dir)
            metrics, sources, encounters = [], [], []
            for log_path in store.list_logs():
                log = store.load(log_path)
                grid = self._grid_for_log(log, log_path, map_path)
                m = episode_metrics(log, grid)
                found = analyzer.analyze_log(log, grid, log_index=len(all_logs))
                all_logs.append(log)
                encounters.extend(found)
                metrics.append(m)
                sources.append({'log_path': log_path, 'map_id': log.episode.map_id, 'seed': log.episode.seed,
                                'policy': log.policy_name})
                episode_rows.append([run_number, log_path, log.episode.map_id, log.episode.seed, int(m.success),
                                     repr(m.spl), int(m.human_collision), int(m.timeout),
                                     repr(m.path_length), repr(m.shortest_length), m.t_end])
            runs.append(metrics)
            run_encounters.append((run_dir, metrics, sources, encounters))
            all_encounters.extend(encounters)

        summary = aggregate(runs)
        report = analyzer.build_report(all_encounters, all_logs)
        table = format_summary(summary) + [''] + format_class_table(report)

        os.makedirs(out_dir, exist_ok=True)
        config_dict = self.config.output_dict()
        paths = {name: os.path.join(out_dir, name) for name in
                 ('metrics.json', 'encounters.json', 'curves.csv', 'episodes.csv', 'table.txt', 'results.db')}
        atomic_write_text(paths['metrics.json'], json.dumps(
            {'config': config_dict, 'run_dirs': list(run_dirs), 'summary': summary}, indent=2, sort_keys=True) + '\n')
        atomic_write_text(paths['encounters.json'], json.dumps(
            {'config': config_dict, 'report': report.to_dict(),
             'encounters': [e.to_dict() for e in all_encounters]}, indent=2, sort_keys=True) + '\n')
        curve_rows = [[name, repr(b), repr(a), repr(d)]
                      for name, curve in report.curves.items()
                      for b, a, d in zip(curve['bins'], curve['alv'], curve['ad'])]
        atomic_write_text(paths['curves.csv'], _csv_text(['class', 'completion_pct', 'alv', 'ad'], curve_rows))
        atomic_write_text(paths['episodes.csv'], _csv_text(
            ['run', 'log_path', 'map_id', 'seed', 'success', 'spl', 'human_collision', 'timeout',
             'path_length', 'shortest_length', 't_end'], episode_rows))
        atomic_write_text(paths['table.txt'], '\n'.join(table) + '\n')

        database = self._write_database(paths['results.db'], run_encounters, config_dict, label)

        self.logger.info(f"Evaluated {len(all_logs)} logs in {len(run_dirs)} runs; "
                         f"{report.total} encounters; reports in {out_dir}")
        return {'summary': summary, 'report': report, 'table': table, 'paths': paths, 'database': database}

    def _write_database(self, db_path: str, run_encounters, config_dict: Dict[str, Any],
                        label: Optional[str]) -> List[Dict[str, Any]]:
        """A fresh results.db per evaluation; returns the SQL summary of each run"""
        if os.path.exists(db_path):
            os.remove(db_path)
        db = ResultsDatabase(db_path)
        try:
            for run_dir, metrics, sources, encounters in run_encounters:
                policies = sorted({s['policy'] for s in sources})
                run_id = db.add_run(label or os.path.basename(os.path.normpath(run_dir)), run_dir,
                                    ','.join(policies), config_dict)
                db.add_episodes(run_id, metrics, sources)
                db.add_encounters(run_id, encounters)
            return [{'run_id': run['run_id'], 'label': run['label'], 'policy': run['policy'],
                     **db.run_summary(run['run_id']), 'classes': db.class_statistics(run['run_id'])}
                    for run in db.get_runs()]
        finally:
            db.close()

    def render(self, log_path: str, out_path: str, map_path: Optional[str] = None,
               with_encounters: bool = True) -> str:
        log = TrajectoryStore.load(log_path)
        grid = self._grid_for_log(log, log_path, map_path)
        encounters = None
        if with_encounters and log.records:
            analyzer = EncounterAnalyzer(EncounterParams.from_settings(self.config.encounters),
                                         self.config.simulation.v_max)
            encounters = analyzer.analyze_log(log, grid)
        return render_log(log, grid, out_path, encounters)

    def train(self, map_paths: Sequence[str], checkpoint_path: str, log_path: Optional[str] = None,
              n_updates: Optional[int] = None, resume: bool = False) -> Dict[str, Any]:
        if not map_paths:
            raise ConfigError("Training needs at least one map")
        grids = [self.load_map(p)[0] for p in map_paths]
        trainer = Trainer(self.config, grids, checkpoint_path, log_path)
        if resume:
            trainer.resume()
        trainer.train(n_updates)
        last = trainer.rows[-1] if trainer.rows else {}
        return {'checkpoint': checkpoint_path, 'log': log_path, 'update': trainer.update, 'last': last}
