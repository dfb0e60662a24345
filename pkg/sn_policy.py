"""
Multi-Belief Navigation Policy
Ray/goal encoders, parallel GRU beliefs, state-attention fusion, Gaussian action head,
social-feature regressors and the analytic gradients of the joint training loss
"""

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from sn_config import SocialNavConfig, SocialNavError
from sn_simcore import Action, Episode, Policy, PolicyInput
from sn_world import OccupancyGrid, Pose, wrap_angle

logger = logging.getLogger(__name__)

GOAL_DIM = 3
ACTION_DIM = 2
HEAD_DIM = 5
POSE_INPUT_DIM = GOAL_DIM + ACTION_DIM
LOG_2PI = math.log(2.0 * math.pi)
GRU_KEYS = ('Wz', 'Uz', 'bz', 'Wr', 'Ur', 'br', 'Wn', 'Un', 'bn')
KNOWN_TASKS = ('risk', 'compass')


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - np.max(scores, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


@dataclass
class Observation:
    rays: np.ndarray
    goal: np.ndarray
    prev_action: np.ndarray

    def pose_vector(self) -> np.ndarray:
        return np.concatenate([self.goal, self.prev_action])


def ray_angles(heading: float, fov: float, n_rays: int) -> np.ndarray:
    """World angles of the rays, left edge of the field of view first"""
    if n_rays == 1:
        return np.array([heading])
    return heading + np.linspace(fov / 2.0, -fov / 2.0, n_rays)


def cast_rays(grid: OccupancyGrid, pose: Pose, pedestrians: Sequence[Pose], angles: np.ndarray,
              sight_range: float, r_human: float) -> np.ndarray:
    """Range to the first wall cell or pedestrian disc along each ray, capped at sight_range"""
    step = grid.resolution / 2.0
    n = int(math.ceil(sight_range / step))
    s = np.minimum(np.arange(1, n + 1) * step, sight_range)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    pts = np.array([pose.x, pose.y]) + s[None, :, None] * dirs[:, None, :]
    col = np.floor(pts[..., 0] / grid.resolution).astype(int)
    yb = np.floor(pts[..., 1] / grid.resolution).astype(int)
    inside = (col >= 0) & (col < grid.width) & (yb >= 0) & (yb < grid.height)
    rows = np.clip(grid.height - 1 - yb, 0, grid.height - 1)
    cols = np.clip(col, 0, grid.width - 1)
    occupied = ~inside | grid.cells[rows, cols]
    ranges = np.where(occupied.any(axis=1), s[np.argmax(occupied, axis=1)], sight_range)
    for ped in pedestrians:
        offset = np.array([pose.x - ped.x, pose.y - ped.y])
        b = dirs @ offset
        c = float(offset @ offset) - r_human * r_human
        disc = b * b - c
        hit = disc >= 0.0
        t = np.where(hit, -b - np.sqrt(np.maximum(disc, 0.0)), np.inf)
        if c <= 0.0:
            t = np.zeros_like(t)
        t = np.where(t >= 0.0, t, np.inf)
        ranges = np.minimum(ranges, t)
    return np.minimum(ranges, sight_range)


def build_observation(view: PolicyInput, config: SocialNavConfig) -> Observation:
    sight = config.encounters.sight_range
    angles = ray_angles(view.agent.theta, config.encounters.fov, config.policy.n_rays)
    ranges = cast_rays(view.grid, view.agent, view.pedestrians, angles, sight, config.simulation.r_human)
    dx, dy = view.goal[0] - view.agent.x, view.goal[1] - view.agent.y
    bearing = wrap_angle(math.atan2(dy, dx) - view.agent.theta)
    goal = np.array([min(math.hypot(dx, dy) / config.policy.goal_scale, 1.0),
                     math.sin(bearing), math.cos(bearing)])
    return Observation(rays=ranges / sight, goal=goal,
                       prev_action=np.array(view.prev_action.to_list(), dtype=float))


def gru_forward(p: Dict[str, np.ndarray], prefix: str, x: np.ndarray, hp: np.ndarray):
    z = sigmoid(x @ p[prefix + 'Wz'].T + hp @ p[prefix + 'Uz'].T + p[prefix + 'bz'])
    r = sigmoid(x @ p[prefix + 'Wr'].T + hp @ p[prefix + 'Ur'].T + p[prefix + 'br'])
    un = hp @ p[prefix + 'Un'].T
    n = np.tanh(x @ p[prefix + 'Wn'].T + r * un + p[prefix + 'bn'])
    h = (1.0 - z) * n + z * hp
    return h, (x, hp, z, r, un, n)


def gru_backward(p: Dict[str, np.ndarray], prefix: str, dh: np.ndarray, cache,
                 grads: Dict[str, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (d input, d previous hidden) and accumulates parameter gradients"""
    x, hp, z, r, un, n = cache
    dn = dh * (1.0 - z)
    dz = dh * (hp - n)
    dhp = dh * z
    dan = dn * (1.0 - n * n)
    dr = dan * un
    dun = dan * r
    daz = dz * z * (1.0 - z)
    dar = dr * r * (1.0 - r)
    grads[prefix + 'Wn'] += dan.T @ x
    grads[prefix + 'bn'] += dan.sum(axis=0)
    grads[prefix + 'Un'] += dun.T @ hp
    grads[prefix + 'Wz'] += daz.T @ x
    grads[prefix + 'Uz'] += daz.T @ hp
    grads[prefix + 'bz'] += daz.sum(axis=0)
    grads[prefix + 'Wr'] += dar.T @ x
    grads[prefix + 'Ur'] += dar.T @ hp
    grads[prefix + 'br'] += dar.sum(axis=0)
    dx = dan @ p[prefix + 'Wn'] + daz @ p[prefix + 'Wz'] + dar @ p[prefix + 'Wr']
    dhp = dhp + dun @ p[prefix + 'Un'] + daz @ p[prefix + 'Uz'] + dar @ p[prefix + 'Ur']
    return dx, dhp


def auxiliary_loss(predictions: np.ndarray, ground_truth: np.ndarray) -> float:
    """Sum over the horizon of per-step MSE, divided by k (horizon length minus one)"""
    pred = np.asarray(predictions, dtype=float)
    truth = np.asarray(ground_truth, dtype=float)
    if pred.ndim == 2:
        pred, truth = pred[None], truth[None]
    pred = pred.reshape(pred.shape[0], pred.shape[1], -1)
    truth = truth.reshape(pred.shape)
    k = pred.shape[1] - 1
    if k < 1:
        raise ValueError("Auxiliary horizon must cover at least two steps")
    per_step = np.mean((pred - truth) ** 2, axis=2)
    return float(np.mean(np.sum(per_step, axis=1)) / k)


@dataclass
class TrainingBatch:
    """One rollout chunk, time-major (T, B, ...)"""
    rays: np.ndarray
    pose: np.ndarray
    starts: np.ndarray
    h0: np.ndarray
    raw_actions: np.ndarray
    mask: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    aux_actions: np.ndarray
    aux_targets: Dict[str, np.ndarray] = field(default_factory=dict)
    aux_mask: Optional[np.ndarray] = None


@dataclass
class LossWeights:
    value_coef: float = 0.5
    entropy_coef: float = 1e-3
    aux_weight: float = 1.0
    policy_coef: float = 1.0


class PolicyNetwork:
    """Parameters plus forward and backward passes of the multi-belief policy"""

    def __init__(self, config: Optional[SocialNavConfig] = None, seed: int = 0,
                 params: Optional[Dict[str, np.ndarray]] = None):
        self.config = config or SocialNavConfig()
        settings = self.config.policy
        self.tasks: List[str] = list(settings.tasks)
        unknown = [t for t in self.tasks if t not in KNOWN_TASKS]
        if unknown:
            raise SocialNavError(f"Unknown auxiliary tasks: {unknown}")
        self.n_beliefs = max(1, len(self.tasks))
        self.n_rays = settings.n_rays
        self.visual_dim = settings.visual_dim
        self.pose_dim = settings.pose_dim
        self.d = settings.belief_dim
        self.embed_dim = settings.action_embed_dim
        self.sigma_floor = settings.sigma_floor
        self.feature_dim = self.visual_dim + self.pose_dim
        self.task_dims = {'risk': 1, 'compass': self.config.features.compass_sectors}
        self.logger = logging.getLogger(__name__)
        self.params = params if params is not None else self.init_params(np.random.default_rng(seed))
        self._check_shapes()

    def param_shapes(self) -> 'OrderedDict[str, Tuple[int, ...]]':
        shapes = OrderedDict()
        shapes['enc_v.W'] = (self.visual_dim, self.n_rays)
        shapes['enc_v.b'] = (self.visual_dim,)
        shapes['enc_p.W'] = (self.pose_dim, POSE_INPUT_DIM)
        shapes['enc_p.b'] = (self.pose_dim,)
        for i in range(self.n_beliefs):
            self._gru_shapes(shapes, f'belief{i}.', self.feature_dim)
        shapes['attn.Wk'] = (self.d, self.feature_dim)
        shapes['attn.bk'] = (self.d,)
        shapes['head.W'] = (HEAD_DIM, self.d)
        shapes['head.b'] = (HEAD_DIM,)
        for task in self.tasks:
            pre = f'reg_{task}.'
            shapes[pre + 'We'] = (self.embed_dim, ACTION_DIM)
            shapes[pre + 'be'] = (self.embed_dim,)
            self._gru_shapes(shapes, pre, self.embed_dim)
            shapes[pre + 'Wo'] = (self.task_dims[task], self.d)
            shapes[pre + 'bo'] = (self.task_dims[task],)
        return shapes

    def _gru_shapes(self, shapes, prefix: str, input_dim: int) -> None:
        for gate in 'zrn':
            shapes[f'{prefix}W{gate}'] = (self.d, input_dim)
            shapes[f'{prefix}U{gate}'] = (self.d, self.d)
            shapes[f'{prefix}b{gate}'] = (self.d,)

    def init_params(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        params = OrderedDict()
        for name, shape in self.param_shapes().items():
            if len(shape) == 1:
                params[name] = np.zeros(shape)
            else:
                params[name] = rng.standard_normal(shape) / math.sqrt(shape[1])
        params['head.W'] *= 0.01
        # sigma starts near 0.5
        params['head.b'][2:4] = math.log(math.expm1(0.5 - self.sigma_floor))
        return params

    def _check_shapes(self) -> None:
        expected = self.param_shapes()
        if set(expected) != set(self.params):
            raise SocialNavError("Parameter names do not match the configured architecture")
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != shape:
                raise SocialNavError(f"Parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def zero_grads(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, np.zeros_like(value)) for name, value in self.params.items())

    def initial_state(self, batch: int = 1) -> np.ndarray:
        return np.zeros((batch, self.n_beliefs, self.d))

    # Forward pieces

    def encode(self, rays: np.ndarray, pose: np.ndarray):
        p = self.params
        phi_v = np.tanh(rays @ p['enc_v.W'].T + p['enc_v.b'])
        phi_p = pose @ p['enc_p.W'].T + p['enc_p.b']
        return np.concatenate([phi_v, phi_p], axis=-1), (rays, pose, phi_v)

    def update_beliefs(self, h_prev: np.ndarray, phi_f: np.ndarray):
        """Each belief runs its own GRU on the shared embedding"""
        outputs, caches = [], []
        for i in range(self.n_beliefs):
            h, cache = gru_forward(self.params, f'belief{i}.', phi_f, h_prev[:, i])
            outputs.append(h)
            caches.append(cache)
        return np.stack(outputs, axis=1), caches

    def state_attention(self, h: np.ndarray, phi_f: np.ndarray):
        p = self.params
        key = phi_f @ p['attn.Wk'].T + p['attn.bk']
        scores = np.einsum('bid,bd->bi', h, key) / math.sqrt(self.d)
        weights = softmax(scores)
        fused = np.einsum('bi,bid->bd', weights, h)
        out = fused @ p['head.W'].T + p['head.b']
        mu = out[:, 0:2]
        sigma = softplus(out[:, 2:4]) + self.sigma_floor
        value = out[:, 4]
        cache = (h, phi_f, key, weights, fused, out)
        return mu, sigma, value, weights, cache

    def step(self, rays: np.ndarray, pose: np.ndarray, h_prev: np.ndarray) -> Dict[str, np.ndarray]:
        phi_f, _ = self.encode(rays, pose)
        h, _ = self.update_beliefs(h_prev, phi_f)
        mu, sigma, value, weights, _ = self.state_attention(h, phi_f)
        return {'mu': mu, 'sigma': sigma, 'value': value, 'h': h, 'weights': weights, 'phi_f': phi_f}

    def regressor_forward(self, task: str, h0: np.ndarray, actions: np.ndarray):
        """Predictions (S, k+1, out) from initial beliefs (S, d) and executed actions (S, k+1, 2)"""
        p = self.params
        pre = f'reg_{task}.'
        g = h0
        preds, caches = [], []
        for j in range(actions.shape[1]):
            a = actions[:, j]
            e = a @ p[pre + 'We'].T + p[pre + 'be']
            g, gru_cache = gru_forward(p, pre, e, g)
            preds.append(g @ p[pre + 'Wo'].T + p[pre + 'bo'])
            caches.append((a, gru_cache, g))
        return np.stack(preds, axis=1), caches

    def regressor_predict(self, task: str, h: np.ndarray, actions: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        actions = np.asarray(actions, dtype=float)
        single = h.ndim == 1
        preds, _ = self.regressor_forward(task, h.reshape(-1, self.d),
                                          actions.reshape(-1, actions.shape[-2], ACTION_DIM))
        return preds[0] if single else preds

    def regressor_backward(self, task: str, dpreds: np.ndarray, caches, grads) -> np.ndarray:
        p = self.params
        pre = f'reg_{task}.'
        dg = np.zeros((dpreds.shape[0], self.d))
        for j in reversed(range(len(caches))):
            a, gru_cache, g = caches[j]
            ds = dpreds[:, j]
            grads[pre + 'Wo'] += ds.T @ g
            grads[pre + 'bo'] += ds.sum(axis=0)
            dg = dg + ds @ p[pre + 'Wo']
            de, dg = gru_backward(p, pre, dg, gru_cache, grads)
            grads[pre + 'We'] += de.T @ a
            grads[pre + 'be'] += de.sum(axis=0)
        return dg

    # Joint loss

    def loss_and_gradients(self, batch: TrainingBatch, weights: LossWeights):
        p = self.params
        grads = self.zero_grads()
        T, B = batch.mask.shape
        n_valid = max(float(np.sum(batch.mask)), 1.0)
        keep = 1.0 - batch.starts.astype(float)

        h = batch.h0
        steps = []
        beliefs = np.zeros((T, B, self.n_beliefs, self.d))
        for t in range(T):
            hp = h * keep[t][:, None, None]
            phi_f, enc_cache = self.encode(batch.rays[t], batch.pose[t])
            h, gru_caches = self.update_beliefs(hp, phi_f)
            mu, sigma, value, _, att_cache = self.state_attention(h, phi_f)
            beliefs[t] = h
            steps.append((enc_cache, gru_caches, att_cache, mu, sigma, value))

        stats: Dict[str, float] = {}
        policy_loss = value_loss = entropy = 0.0
        douts = []
        for t in range(T):
            _, _, att_cache, mu, sigma, value = steps[t]
            m = batch.mask[t]
            u = batch.raw_actions[t]
            adv = batch.advantages[t]
            diff = u - mu
            logp = np.sum(-0.5 * (diff / sigma) ** 2 - np.log(sigma) - 0.5 * LOG_2PI, axis=1)
            ent = np.sum(0.5 + 0.5 * LOG_2PI + np.log(sigma), axis=1)
            verr = value - batch.returns[t]
            policy_loss += float(np.sum(-m * adv * logp)) / n_valid
            value_loss += float(np.sum(m * 0.5 * verr ** 2)) / n_valid
            entropy += float(np.sum(m * ent)) / n_valid

            scale = (m * adv / n_valid)[:, None]
            dmu = -weights.policy_coef * scale * diff / sigma ** 2
            dsigma = -weights.policy_coef * scale * (diff ** 2 / sigma ** 3 - 1.0 / sigma)
            dsigma -= weights.entropy_coef * (m / n_valid)[:, None] / sigma
            draw_sigma = dsigma * sigmoid(att_cache[5][:, 2:4])
            dvalue = weights.value_coef * m * verr / n_valid
            douts.append(np.concatenate([dmu, draw_sigma, dvalue[:, None]], axis=1))

        total = (weights.policy_coef * policy_loss + weights.value_coef * value_loss
                 - weights.entropy_coef * entropy)
        stats['policy_loss'] = policy_loss
        stats['value_loss'] = value_loss
        stats['entropy'] = entropy

        dh_aux = np.zeros_like(beliefs)
        if self.tasks and batch.aux_mask is not None and np.any(batch.aux_mask):
            tt, bb = np.nonzero(batch.aux_mask)
            actions = batch.aux_actions[tt, bb]
            k = actions.shape[1] - 1
            for i, task in enumerate(self.tasks):
                targets = batch.aux_targets[task][tt, bb].reshape(len(tt), k + 1, -1)
                preds, caches = self.regressor_forward(task, beliefs[tt, bb, i], actions)
                task_loss = auxiliary_loss(preds, targets)
                stats[f'aux_{task}'] = task_loss
                total += weights.aux_weight * task_loss
                dpreds = weights.aux_weight * 2.0 * (preds - targets) / (len(tt) * targets.shape[2] * k)
                dh_aux[tt, bb, i] += self.regressor_backward(task, dpreds, caches, grads)
        for task in KNOWN_TASKS:
            stats.setdefault(f'aux_{task}', 0.0)
        stats['total'] = total

        carry = np.zeros((B, self.n_beliefs, self.d))
        for t in reversed(range(T)):
            enc_cache, gru_caches, att_cache, _, _, _ = steps[t]
            dH, dphi = self._attention_backward(douts[t], att_cache, grads)
            dH += carry + dh_aux[t]
            dprev = np.zeros_like(dH)
            for i in range(self.n_beliefs):
                dx, dprev[:, i] = gru_backward(p, f'belief{i}.', dH[:, i], gru_caches[i], grads)
                dphi += dx
            carry = dprev * keep[t][:, None, None]
            self._encoder_backward(dphi, enc_cache, grads)
        return total, grads, stats

    def _attention_backward(self, dout: np.ndarray, cache, grads):
        p = self.params
        h, phi_f, key, weights, fused, _ = cache
        grads['head.W'] += dout.T @ fused
        grads['head.b'] += dout.sum(axis=0)
        dfused = dout @ p['head.W']
        dweights = np.einsum('bd,bid->bi', dfused, h)
        dH = weights[:, :, None] * dfused[:, None, :]
        dscores = weights * (dweights - np.sum(weights * dweights, axis=1, keepdims=True))
        dscores /= math.sqrt(self.d)
        dH += dscores[:, :, None] * key[:, None, :]
        dkey = np.einsum('bi,bid->bd', dscores, h)
        grads['attn.Wk'] += dkey.T @ phi_f
        grads['attn.bk'] += dkey.sum(axis=0)
        return dH, dkey @ p['attn.Wk']

    def _encoder_backward(self, dphi: np.ndarray, cache, grads) -> None:
        rays, pose, phi_v = cache
        dv = dphi[:, :self.visual_dim] * (1.0 - phi_v ** 2)
        dp = dphi[:, self.visual_dim:]
        grads['enc_v.W'] += dv.T @ rays
        grads['enc_v.b'] += dv.sum(axis=0)
        grads['enc_p.W'] += dp.T @ pose
        grads['enc_p.b'] += dp.sum(axis=0)


class LearnedPolicy(Policy):
    """Rolls out a trained network; samples actions unless deterministic"""
    name = "learned"

    def __init__(self, network: PolicyNetwork, deterministic: bool = False):
        self.network = network
        self.config = network.config
        self.deterministic = deterministic
        self.h = network.initial_state(1)
        self.rng = np.random.default_rng(0)

    def reset(self, episode: Episode, rng: np.random.Generator) -> None:
        self.h = self.network.initial_state(1)
        self.rng = rng

    def act(self, view: PolicyInput) -> Action:
        obs = build_observation(view, self.config)
        out = self.network.step(obs.rays[None], obs.pose_vector()[None], self.h)
        self.h = out['h']
        mu, sigma = out['mu'][0], out['sigma'][0]
        if self.deterministic:
            sample = mu
        else:
            sample = mu + sigma * self.rng.standard_normal(ACTION_DIM)
        return Action(float(sample[0]), float(sample[1]))
