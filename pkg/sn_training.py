"""
Actor-Critic Training Harness
Batched rollouts, n-step returns, Adam updates, resumable checkpoints and training logs
"""

import csv
import io
import json
import logging
import math
import os
from collections import OrderedDict
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sn_config import SocialNavConfig, SocialNavError, config_from_dict
from sn_policy import (ACTION_DIM, POSE_INPUT_DIM, LossWeights, PolicyNetwork, TrainingBatch,
                       build_observation, cast_rays, ray_angles)
from sn_scenario_generator import EpisodeGenerator, GenerationError
from sn_simcore import Action, EpisodeSimulator, EpisodeConstructionError, TrajectoryLog
from sn_trajectory import atomic_write_text
from sn_world import OccupancyGrid, wrap_angle

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "socnav-policy"
CHECKPOINT_VERSION = 1
LOG_COLUMNS = ('update', 'policy_loss', 'value_loss', 'aux_risk', 'aux_compass', 'mean_return')


class TrainingDivergenceError(SocialNavError):
    """Loss or gradients became non-finite"""


class CheckpointError(SocialNavError):
    """Checkpoint missing, malformed or incompatible"""


class AdamOptimizer:
    def __init__(self, params: Dict[str, np.ndarray], learning_rate: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())
        self.v = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            params[name] = params[name] - self.learning_rate * update

    def state_dict(self) -> Dict[str, Any]:
        return {'t': self.t, 'learning_rate': self.learning_rate,
                'm': {k: v.ravel().tolist() for k, v in self.m.items()},
                'v': {k: v.ravel().tolist() for k, v in self.v.items()}}

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.t = int(state['t'])
        for name in self.m:
            self.m[name] = np.array(state['m'][name], dtype=float).reshape(self.m[name].shape)
            self.v[name] = np.array(state['v'][name], dtype=float).reshape(self.v[name].shape)


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place to a global L2 norm of at most max_norm; returns the norm before"""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for name in grads:
            grads[name] *= scale
    return norm


def nstep_returns(rewards: np.ndarray, dones: np.ndarray, bootstrap: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted returns over a (T, B) chunk, cut at episode ends and bootstrapped after the last step"""
    returns = np.zeros_like(rewards)
    running = bootstrap.astype(float)
    for t in reversed(range(rewards.shape[0])):
        running = rewards[t] + gamma * running * (1.0 - dones[t])
        returns[t] = running
    return returns


def aux_windows(features: np.ndarray, actions: np.ndarray, breaks: np.ndarray,
                k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per (t, b): executed actions and features over t..t+k, valid only inside one episode and chunk.

    `breaks[t, b]` is True when step t ends an episode.
    """
    T, B = breaks.shape
    aux_actions = np.zeros((T, B, k + 1, ACTION_DIM))
    aux_features = np.zeros((T, B, k + 1, features.shape[2]))
    aux_mask = np.zeros((T, B), dtype=bool)
    for t in range(T - k):
        aux_actions[t] = np.transpose(actions[t:t + k + 1], (1, 0, 2))
        aux_features[t] = np.transpose(features[t:t + k + 1], (1, 0, 2))
        aux_mask[t] = ~np.any(breaks[t:t + k], axis=0)
    return aux_actions, aux_features, aux_mask


def split_feature_targets(aux_features: np.ndarray, tasks: Sequence[str]) -> Dict[str, np.ndarray]:
    targets = {}
    for task in tasks:
        targets[task] = aux_features[..., 0:1] if task == 'risk' else aux_features[..., 1:]
    return targets


class _EnvSlot:
    def __init__(self, simulator: EpisodeSimulator, config: SocialNavConfig, n_beliefs: int, d: int):
        self.simulator = simulator
        self.config = config
        record = simulator.reset()
        self.features = np.array(record.features.as_vector())
        self.observation = build_observation(simulator.view(), config)
        self.h = np.zeros((n_beliefs, d))
        self.fresh = True
        self.episode_return = 0.0


class RolloutCollector:
    """Runs num_envs simulators in lockstep and cuts (T, B) training chunks"""

    def __init__(self, network: PolicyNetwork, grids: Sequence[OccupancyGrid], config: SocialNavConfig,
                 seed: int = 0, episode_counter: int = 0, rng: Optional[np.random.Generator] = None):
        if not grids:
            raise SocialNavError("Training needs at least one map")
        self.network = network
        self.config = config
        self.seed = seed
        self.generators = [EpisodeGenerator(g, config) for g in grids]
        self.episode_counter = episode_counter
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.finished_returns: List[float] = []
        self.logger = logging.getLogger(__name__)
        self.slots = [self._new_slot() for _ in range(config.training.num_envs)]

    def _new_slot(self) -> _EnvSlot:
        for _ in range(100):
            index = self.episode_counter
            self.episode_counter += 1
            generator = self.generators[index % len(self.generators)]
            try:
                episode = generator.generate_episode(np.random.default_rng([self.seed, index]))
                simulator = EpisodeSimulator(episode, generator.grid, self.config, generator.nav_grid)
                return _EnvSlot(simulator, self.config, self.network.n_beliefs, self.network.d)
            except (GenerationError, EpisodeConstructionError) as e:
                self.logger.warning(f"Skipping training episode {index}: {e}")
        raise SocialNavError("Could not construct a training episode after 100 attempts")

    def collect(self, n_steps: int, k: int) -> TrainingBatch:
        net = self.network
        B = len(self.slots)
        T = n_steps
        n_feat = 1 + self.config.features.compass_sectors
        rays = np.zeros((T, B, net.n_rays))
        pose = np.zeros((T, B, POSE_INPUT_DIM))
        starts = np.zeros((T, B), dtype=bool)
        raw_actions = np.zeros((T, B, ACTION_DIM))
        exec_actions = np.zeros((T, B, ACTION_DIM))
        rewards = np.zeros((T, B))
        dones = np.zeros((T, B))
        values = np.zeros((T, B))
        features = np.zeros((T, B, n_feat))
        h0 = np.stack([slot.h for slot in self.slots])
        for t in range(T):
            for b, slot in enumerate(self.slots):
                rays[t, b] = slot.observation.rays
                pose[t, b] = slot.observation.pose_vector()
                starts[t, b] = slot.fresh
                features[t, b] = slot.features
            h_prev = np.stack([slot.h for slot in self.slots])
            out = net.step(rays[t], pose[t], h_prev)
            values[t] = out['value']
            raw = out['mu'] + out['sigma'] * self.rng.standard_normal((B, ACTION_DIM))
            raw_actions[t] = raw
            exec_actions[t] = np.clip(raw, -1.0, 1.0)
            for b, slot in enumerate(self.slots):
                record = slot.simulator.step(Action(float(exec_actions[t, b, 0]), float(exec_actions[t, b, 1])))
                rewards[t, b] = record.outcome.reward
                slot.episode_return += record.outcome.reward
                slot.h = out['h'][b]
                slot.fresh = False
                if slot.simulator.done:
                    dones[t, b] = 1.0
                    self.finished_returns.append(slot.episode_return)
                    self.slots[b] = self._new_slot()
                else:
                    slot.features = np.array(record.features.as_vector())
                    slot.observation = build_observation(slot.simulator.view(), self.config)
        h_last = np.stack([slot.h for slot in self.slots])
        tail = net.step(np.stack([s.observation.rays for s in self.slots]),
                        np.stack([s.observation.pose_vector() for s in self.slots]), h_last)
        bootstrap = np.where([s.fresh for s in self.slots], 0.0, tail['value'])
        returns = nstep_returns(rewards, dones, bootstrap, self.config.training.gamma)
        aux_actions, aux_features, aux_mask = aux_windows(features, exec_actions, dones.astype(bool), k)
        return TrainingBatch(rays=rays, pose=pose, starts=starts, h0=h0, raw_actions=raw_actions,
                             mask=np.ones((T, B)), advantages=returns - values, returns=returns,
                             aux_actions=aux_actions,
                             aux_targets=split_feature_targets(aux_features, net.tasks),
                             aux_mask=aux_mask)


def check_finite(loss: float, grads: Dict[str, np.ndarray], update: int, stats: Dict[str, float]) -> None:
    if not math.isfinite(loss):
        raise TrainingDivergenceError(f"Non-finite loss at update {update}: {stats}")
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise TrainingDivergenceError(f"Non-finite gradients at update {update} in {bad}")


def save_checkpoint(path: str, network: PolicyNetwork, optimizer: Optional[AdamOptimizer] = None,
                    update: int = 0, episode_counter: int = 0,
                    rng: Optional[np.random.Generator] = None) -> None:
    document = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'config': network.config.output_dict(),
        'manifest': {name: list(shape) for name, shape in network.param_shapes().items()},
        'params': {name: value.ravel().tolist() for name, value in network.params.items()},
        'optimizer': optimizer.state_dict() if optimizer is not None else None,
        'update': update,
        'episode_counter': episode_counter,
        'rng_state': rng.bit_generator.state if rng is not None else None,
    }
    atomic_write_text(path, json.dumps(document))
    logger.info(f"Checkpoint saved to {path} at update {update}")


def load_checkpoint(path: str) -> Tuple[PolicyNetwork, Dict[str, Any]]:
    try:
        with open(path, 'r') as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}")
    if document.get('format') != CHECKPOINT_FORMAT or document.get('version') != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} is not a version {CHECKPOINT_VERSION} policy checkpoint")
    config = config_from_dict(document['config'])
    params = OrderedDict()
    for name, shape in document['manifest'].items():
        values = np.array(document['params'][name], dtype=float)
        if values.size != int(np.prod(shape)):
            raise CheckpointError(f"Parameter {name} does not match its manifest shape {shape}")
        params[name] = values.reshape(shape)
    try:
        network = PolicyNetwork(config, params=params)
    except SocialNavError as e:
        raise CheckpointError(f"Checkpoint {path} incompatible with its own config: {e}")
    return network, document


def read_training_log(path: str) -> List[Dict[str, float]]:
    if not os.path.exists(path):
        return []
    with open(path, 'r', newline='') as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]


def write_training_log(path: str, rows: Sequence[Dict[str, float]]) -> None:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=LOG_COLUMNS, lineterminator='\n')
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (int(row[k]) if k == 'update' else repr(float(row[k]))) for k in LOG_COLUMNS})
    atomic_write_text(path, buffer.getvalue())


class Trainer:
    """Single-learner advantage actor-critic with auxiliary social-feature losses"""

    def __init__(self, config: SocialNavConfig, grids: Sequence[OccupancyGrid],
                 checkpoint_path: Optional[str] = None, log_path: Optional[str] = None,
                 network: Optional[PolicyNetwork] = None):
        self.config = config
        self.settings = config.training
        self.grids = list(grids)
        self.checkpoint_path = checkpoint_path
        self.log_path = log_path
        self.logger = logging.getLogger(__name__)
        self.network = network or PolicyNetwork(config, seed=self.settings.seed)
        self.optimizer = AdamOptimizer(self.network.params, self.settings.learning_rate)
        self.rng = np.random.default_rng(self.settings.seed)
        self.update = 0
        self.rows: List[Dict[str, float]] = []
        self.weights = LossWeights(value_coef=self.settings.value_coef,
                                   entropy_coef=self.settings.entropy_coef,
                                   aux_weight=self.settings.aux_weight)
        self.collector: Optional[RolloutCollector] = None
        self._episode_counter = 0

    def resume(self) -> None:
        """Restore network, optimizer, update counter and RNG from the checkpoint"""
        if not self.checkpoint_path or not os.path.exists(self.checkpoint_path):
            raise CheckpointError(f"No checkpoint to resume from at {self.checkpoint_path}")
        network, document = load_checkpoint(self.checkpoint_path)
        self.network = network
        self.optimizer = AdamOptimizer(network.params, self.settings.learning_rate)
        if document.get('optimizer'):
            self.optimizer.load_state_dict(document['optimizer'])
        self.update = int(document.get('update', 0))
        self._episode_counter = int(document.get('episode_counter', 0))
        if document.get('rng_state'):
            self.rng.bit_generator.state = document['rng_state']
        if self.log_path:
            self.rows = [r for r in read_training_log(self.log_path) if r['update'] <= self.update]
        self.logger.info(f"Resumed training at update {self.update}")

    def _save(self) -> None:
        if self.checkpoint_path:
            counter = self.collector.episode_counter if self.collector else self._episode_counter
            save_checkpoint(self.checkpoint_path, self.network, self.optimizer, self.update, counter, self.rng)
        if self.log_path:
            write_training_log(self.log_path, self.rows)

    def train_step(self) -> Dict[str, float]:
        if self.collector is None:
            self.collector = RolloutCollector(self.network, self.grids, self.config, self.settings.seed,
                                              self._episode_counter, self.rng)
        batch = self.collector.collect(self.settings.n_steps, self.settings.aux_horizon)
        loss, grads, stats = self.network.loss_and_gradients(batch, self.weights)
        check_finite(loss, grads, self.update + 1, stats)
        stats['grad_norm'] = clip_gradients(grads, self.settings.max_grad_norm)
        self.optimizer.step(self.network.params, grads)
        self.update += 1
        returns = self.collector.finished_returns
        row = {'update': self.update, 'policy_loss': stats['policy_loss'], 'value_loss': stats['value_loss'],
               'aux_risk': stats['aux_risk'], 'aux_compass': stats['aux_compass'],
               'mean_return': float(np.mean(returns)) if returns else float('nan')}
        self.collector.finished_returns = []
        self.rows.append(row)
        self.logger.debug(f"Update {self.update}: loss={loss:.4f} grad_norm={stats['grad_norm']:.3f}")
        return row

    def train(self, n_updates: Optional[int] = None,
              callback: Optional[Callable[[Dict[str, float]], None]] = None) -> PolicyNetwork:
        n_updates = self.settings.n_updates if n_updates is None else n_updates
        for _ in range(n_updates):
            row = self.train_step()
            if callback:
                callback(row)
            if self.settings.checkpoint_interval and self.update % self.settings.checkpoint_interval == 0:
                self._save()
        self._save()
        self.logger.info(f"Training finished at update {self.update}")
        return self.network


def train(config: SocialNavConfig, grids: Sequence[OccupancyGrid], n_updates: Optional[int] = None,
          checkpoint_path: Optional[str] = None, log_path: Optional[str] = None,
          resume: bool = False) -> Tuple[PolicyNetwork, List[Dict[str, float]]]:
    trainer = Trainer(config, grids, checkpoint_path, log_path)
    if resume:
        trainer.resume()
    trainer.train(n_updates)
    return trainer.network, trainer.rows


def gradient_check(network: PolicyNetwork, batch: TrainingBatch, weights: LossWeights,
                   rng: np.random.Generator, points_per_block: int = 3,
                   eps: float = 1e-6) -> Dict[str, Any]:
    """Central finite differences at random entries of every parameter block"""
    _, grads, _ = network.loss_and_gradients(batch, weights)
    worst, checked, per_block = 0.0, 0, {}
    for name, value in network.params.items():
        block_worst = 0.0
        flat = value.reshape(-1)
        for index in rng.choice(flat.size, size=min(points_per_block, flat.size), replace=False):
            original = flat[index]
            flat[index] = original + eps
            plus, _, _ = network.loss_and_gradients(batch, weights)
            flat[index] = original - eps
            minus, _, _ = network.loss_and_gradients(batch, weights)
            flat[index] = original
            numeric = (plus - minus) / (2.0 * eps)
            analytic = float(grads[name].reshape(-1)[index])
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            block_worst = max(block_worst, rel)
            checked += 1
        per_block[name] = block_worst
        worst = max(worst, block_worst)
    return {'max_relative_error': worst, 'checked': checked, 'per_block': per_block}


def logs_to_aux_batch(logs: Sequence[TrajectoryLog], grids: Dict[str, OccupancyGrid], network: PolicyNetwork,
                      seq_len: int = 16, k: int = 4, max_transitions: int = 1024) -> TrainingBatch:
    """Freeze logged transitions into (seq_len, B) sequences for auxiliary-only training"""
    config = network.config
    sight = config.encounters.sight_range
    sequences = []
    used = 0
    for log in logs:
        grid = grids[log.episode.map_id]
        goal = log.episode.goal
        records = log.records
        for start in range(0, len(records) - seq_len + 1, seq_len):
            if used + seq_len > max_transitions:
                break
            rays, pose, feats, acts = [], [], [], []
            for offset in range(seq_len):
                record = records[start + offset]
                agent = record.agent
                angles = ray_angles(agent.theta, config.encounters.fov, network.n_rays)
                rays.append(cast_rays(grid, agent, record.pedestrians, angles, sight,
                                      config.simulation.r_human) / sight)
                dx, dy = goal[0] - agent.x, goal[1] - agent.y
                bearing = wrap_angle(math.atan2(dy, dx) - agent.theta)
                pose.append([min(math.hypot(dx, dy) / config.policy.goal_scale, 1.0),
                             math.sin(bearing), math.cos(bearing)] + record.action.to_list())
                feats.append(record.features.as_vector())
                nxt = start + offset + 1
                acts.append(records[nxt].action.to_list() if nxt < len(records) else [0.0, 0.0])
            sequences.append((rays, pose, feats, acts))
            used += seq_len
    if not sequences:
        raise SocialNavError("Not enough logged transitions for an auxiliary batch")
    rays = np.transpose(np.array([s[0] for s in sequences]), (1, 0, 2))
    pose = np.transpose(np.array([s[1] for s in sequences]), (1, 0, 2))
    feats = np.transpose(np.array([s[2] for s in sequences]), (1, 0, 2))
    acts = np.transpose(np.array([s[3] for s in sequences]), (1, 0, 2))
    T, B = rays.shape[:2]
    starts = np.zeros((T, B), dtype=bool)
    starts[0] = True
    aux_actions, aux_features, aux_mask = aux_windows(feats, acts, np.zeros((T, B), dtype=bool), k)
    return TrainingBatch(rays=rays, pose=pose, starts=starts, h0=network.initial_state(B),
                         raw_actions=np.zeros((T, B, ACTION_DIM)), mask=np.zeros((T, B)),
                         advantages=np.zeros((T, B)), returns=np.zeros((T, B)),
                         aux_actions=aux_actions, aux_targets=split_feature_targets(aux_features, network.tasks),
                         aux_mask=aux_mask)


def fit_auxiliary(network: PolicyNetwork, batch: TrainingBatch, n_steps: int = 500,
                  learning_rate: float = 1e-3) -> List[float]:
    """Adam on the auxiliary loss alone; returns the summed auxiliary loss before each step"""
    weights = LossWeights(value_coef=0.0, entropy_coef=0.0, aux_weight=1.0, policy_coef=0.0)
    optimizer = AdamOptimizer(network.params, learning_rate)
    history = []
    for step in range(n_steps):
        loss, grads, stats = network.loss_and_gradients(batch, weights)
        check_finite(loss, grads, step, stats)
        history.append(loss)
        optimizer.step(network.params, grads)
    return history
