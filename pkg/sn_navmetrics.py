"""
Navigation Metrics and Run Aggregation
Success, SPL, Human-Collision and Timeout rates per episode, per run and across runs
"""

import logging
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Any, Dict, List, Sequence

import numpy as np

from sn_simcore import EpisodeStatus, TrajectoryLog
from sn_world import OccupancyGrid, geodesic_distance

logger = logging.getLogger(__name__)

RATE_METRICS = ('success_pct', 'spl', 'spl_pct', 'h_collision_pct', 'timeout_pct')


@dataclass
class EpisodeMetrics:
    success: bool
    spl: float
    human_collision: bool
    timeout: bool
    path_length: float
    shortest_length: float
    t_end: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def path_length(log: TrajectoryLog) -> float:
    positions = log.agent_positions()
    if len(positions) < 2:
        return 0.0
    steps = np.diff(positions, axis=0)
    return float(np.sum(np.hypot(steps[:, 0], steps[:, 1])))


def episode_metrics(log: TrajectoryLog, grid: OccupancyGrid) -> EpisodeMetrics:
    episode = log.episode
    success = log.status == EpisodeStatus.SUCCESS
    travelled = path_length(log)
    shortest = geodesic_distance(grid, episode.agent_start.position, episode.goal)
    if not math.isfinite(shortest):
        logger.warning(f"Episode seed={episode.seed}: goal unreachable on {grid.map_id}")
        shortest = 0.0
    denominator = max(travelled, shortest)
    if not success:
        spl = 0.0
    elif denominator == 0.0:
        spl = 1.0
    else:
        spl = shortest / denominator
    return EpisodeMetrics(success=success, spl=spl,
                          human_collision=log.status == EpisodeStatus.HUMAN_COLLISION,
                          timeout=log.status == EpisodeStatus.TIMEOUT,
                          path_length=travelled, shortest_length=shortest, t_end=log.t_end)


def _percent(count: int, total: int) -> float:
    return float(Fraction(100 * count, total)) if total else 0.0


def run_metrics(episodes: Sequence[EpisodeMetrics]) -> Dict[str, float]:
    """Per-run means; booleans become percentages"""
    n = len(episodes)
    spl = math.fsum(e.spl for e in episodes) / n if n else 0.0
    return {
        'n_episodes': n,
        'success_pct': _percent(sum(e.success for e in episodes), n),
        'spl': spl,
        'spl_pct': 100.0 * spl,
        'h_collision_pct': _percent(sum(e.human_collision for e in episodes), n),
        'timeout_pct': _percent(sum(e.timeout for e in episodes), n),
    }


def aggregate(runs: Sequence[Sequence[EpisodeMetrics]]) -> Dict[str, Any]:
    """Mean and population standard deviation of each per-run metric"""
    per_run = [run_metrics(run) for run in runs]
    summary: Dict[str, Any] = {
        'n_runs': len(per_run),
        'n_episodes': sum(r['n_episodes'] for r in per_run),
        'std': 'population',
        'runs': per_run,
    }
    for metric in RATE_METRICS:
        values = np.array([r[metric] for r in per_run], dtype=float)
        if values.size:
            summary[metric] = {'mean': float(np.mean(values)), 'std': float(np.std(values))}
        else:
            summary[metric] = {'mean': 0.0, 'std': 0.0}
    return summary


def format_summary(summary: Dict[str, Any]) -> List[str]:
    """Table-style lines with two decimals"""
    labels = (('Success %', 'success_pct'), ('SPL', 'spl_pct'), ('H-Collision %', 'h_collision_pct'),
              ('Timeout %', 'timeout_pct'))
    lines = [f"Runs: {summary['n_runs']}  Episodes: {summary['n_episodes']}"]
    for label, key in labels:
        lines.append(f"{label:<15}{summary[key]['mean']:>8.2f} ± {summary[key]['std']:.2f}")
    return lines
