"""
Social Navigation Lab Configuration Management
Centralized configuration with JSON files, SOCNAV_ environment overrides and validation
"""

import copy
import json
import logging
import logging.handlers
import math
import os
from dataclasses import dataclass, field, asdict
from typing import Dict, Any, List, Optional


class SocialNavError(Exception):
    """Base class for every error raised by the lab"""


class ConfigError(SocialNavError):
    """Invalid or unreadable configuration"""


@dataclass
class SimulationSettings:
    dt: float = 0.1
    v_max: float = 0.5
    w_max: float = math.pi / 2
    r_agent: float = 0.2
    r_human: float = 0.3
    max_steps: int = 500
    goal_radius: float = 0.2
    clearance: float = 0.4


@dataclass
class RewardSettings:
    slack: float = -0.002
    collision_coef: float = 0.02
    success_coef: float = 10.0


@dataclass
class FeatureSettings:
    risk_radius: float = 2.0
    compass_radius: float = 5.0
    compass_sectors: int = 8


@dataclass
class EncounterSettings:
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


@dataclass
class GenerationSettings:
    n_pedestrians: int = 3
    min_start_goal_geodesic: float = 1.0
    min_pedestrian_separation: float = 1.0
    speed_min: float = 0.45
    speed_max: float = 0.5
    map_width: int = 80
    map_height: int = 80
    map_resolution: float = 0.1
    max_attempts: int = 2000


@dataclass
class PolicySettings:
    n_rays: int = 24
    visual_dim: int = 64
    pose_dim: int = 8
    belief_dim: int = 64
    action_embed_dim: int = 8
    tasks: List[str] = field(default_factory=lambda: ["risk", "compass"])
    sigma_floor: float = 1e-3
    goal_scale: float = 10.0


@dataclass
class TrainingSettings:
    learning_rate: float = 3e-4
    gamma: float = 0.99
    n_steps: int = 16
    entropy_coef: float = 1e-3
    value_coef: float = 0.5
    aux_weight: float = 1.0
    aux_horizon: int = 4
    num_envs: int = 4
    n_updates: int = 200
    max_grad_norm: float = 0.5
    checkpoint_interval: int = 10
    seed: int = 0


@dataclass
class RunSettings:
    """Inputs and outputs of one command; every subcommand flag lands here"""
    map: Optional[str] = None
    maps: List[str] = field(default_factory=list)
    map_id: Optional[str] = None
    n_episodes: Optional[int] = None
    episodes: Optional[str] = None
    policy: str = "greedy"
    deterministic: bool = False
    runs: List[str] = field(default_factory=list)
    label: Optional[str] = None
    log: Optional[str] = None
    no_encounters: bool = False
    checkpoint: Optional[str] = None
    training_log: Optional[str] = None
    resume: bool = False
    out: Optional[str] = None


@dataclass
class LoggingSettings:
    log_level: str = "INFO"
    log_file: Optional[str] = None
    max_file_size_mb: int = 50
    backup_count: int = 5
    console_output: bool = True
    log_format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


@dataclass
class SocialNavConfig:
    simulation: SimulationSettings = None
    reward: RewardSettings = None
    features: FeatureSettings = None
    encounters: EncounterSettings = None
    generation: GenerationSettings = None
    policy: PolicySettings = None
    training: TrainingSettings = None
    logging_settings: LoggingSettings = None
    run: RunSettings = None
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.simulation is None:
            self.simulation = SimulationSettings()
        if self.reward is None:
            self.reward = RewardSettings()
        if self.features is None:
            self.features = FeatureSettings()
        if self.encounters is None:
            self.encounters = EncounterSettings()
        if self.generation is None:
            self.generation = GenerationSettings()
        if self.policy is None:
            self.policy = PolicySettings()
        if self.training is None:
            self.training = TrainingSettings()
        if self.logging_settings is None:
            self.logging_settings = LoggingSettings()
        if self.run is None:
            self.run = RunSettings()

    def to_dict(self) -> Dict[str, Any]:
        """Plain-dict form, every section included"""
        return asdict(self)

    def output_dict(self) -> Dict[str, Any]:
        """Form embedded in output files: everything but the per-command run section"""
        settings = self.to_dict()
        settings.pop('run')
        return settings


_SECTIONS = {
    'simulation': SimulationSettings,
    'reward': RewardSettings,
    'features': FeatureSettings,
    'encounters': EncounterSettings,
    'generation': GenerationSettings,
    'policy': PolicySettings,
    'training': TrainingSettings,
    'logging_settings': LoggingSettings,
    'run': RunSettings,
}

def _env_flag(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


# SOCNAV_<NAME> -> (section or None for top level, key, caster)
_ENV_OVERRIDES = {
    'SOCNAV_LOG_LEVEL': ('logging_settings', 'log_level', str),
    'SOCNAV_LOG_FILE': ('logging_settings', 'log_file', str),
    'SOCNAV_SEED': (None, 'seed', int),
    'SOCNAV_JOBS': (None, 'jobs', int),
    'SOCNAV_DT': ('simulation', 'dt', float),
    'SOCNAV_V_MAX': ('simulation', 'v_max', float),
    'SOCNAV_MAX_STEPS': ('simulation', 'max_steps', int),
    'SOCNAV_N_PEDESTRIANS': ('generation', 'n_pedestrians', int),
    'SOCNAV_LEARNING_RATE': ('training', 'learning_rate', float),
    'SOCNAV_N_UPDATES': ('training', 'n_updates', int),
    'SOCNAV_MAP': ('run', 'map', str),
    'SOCNAV_EPISODES': ('run', 'episodes', str),
    'SOCNAV_N_EPISODES': ('run', 'n_episodes', int),
    'SOCNAV_POLICY': ('run', 'policy', str),
    'SOCNAV_DETERMINISTIC': ('run', 'deterministic', _env_flag),
    'SOCNAV_CHECKPOINT': ('run', 'checkpoint', str),
    'SOCNAV_OUT': ('run', 'out', str),
}


def config_from_dict(config_dict: Dict[str, Any]) -> SocialNavConfig:
    """Convert dictionary to configuration object"""
    sections = {}
    for name, cls in _SECTIONS.items():
        values = config_dict.get(name, {}) or {}
        try:
            sections[name] = cls(**values)
        except TypeError as e:
            raise ConfigError(f"Unknown key in section '{name}': {e}")
    unknown = set(config_dict) - set(_SECTIONS) - {'seed', 'jobs'}
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {sorted(unknown)}")
    return SocialNavConfig(seed=int(config_dict.get('seed', 0)),
                           jobs=int(config_dict.get('jobs', 1)), **sections)


class ConfigManager:
    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file
        self.config: SocialNavConfig = None
        self.logger = logging.getLogger(__name__)
        self._load_config()

    def _load_config(self) -> None:
        """Load configuration from file, or defaults when no file is given"""
        if not self.config_file:
            self.config = SocialNavConfig()
            return
        if not os.path.exists(self.config_file):
            raise ConfigError(f"Configuration file not found: {self.config_file}")
        try:
            with open(self.config_file, 'r') as f:
                config_data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Failed to read configuration {self.config_file}: {e}")
        if not isinstance(config_data, dict):
            raise ConfigError("Configuration document must be a JSON object")
        self.config = config_from_dict(config_data)
        self.logger.info(f"Configuration loaded from {self.config_file}")

    def save_config(self, path: Optional[str] = None) -> str:
        """Save current configuration to file"""
        path = path or self.config_file
        if not path:
            raise ConfigError("No configuration path to save to")
        with open(path, 'w') as f:
            json.dump(self.config.to_dict(), f, indent=4)
        self.logger.info(f"Configuration saved to {path}")
        return path

    def get_config(self) -> SocialNavConfig:
        """Get current configuration"""
        return self.config

    def update_config(self, updates: Dict[str, Any]) -> SocialNavConfig:
        """Update configuration with new (possibly partial, nested) values"""
        current_dict = self.config.to_dict()
        self._deep_update(current_dict, updates)
        self.config = config_from_dict(current_dict)
        return self.config

    def _deep_update(self, base_dict: Dict, update_dict: Dict) -> None:
        """Recursively update nested dictionaries"""
        for key, value in update_dict.items():
            if key in base_dict and isinstance(base_dict[key], dict) and isinstance(value, dict):
                self._deep_update(base_dict[key], value)
            else:
                base_dict[key] = copy.deepcopy(value)

    def validate_config(self) -> Dict[str, Any]:
        """Validate configuration settings"""
        validation_results = {
            'valid': True,
            'errors': [],
            'warnings': []
        }
        errors = validation_results['errors']
        cfg = self.config

        sim = cfg.simulation
        for name in ('dt', 'v_max', 'w_max', 'r_agent', 'r_human', 'goal_radius'):
            if getattr(sim, name) <= 0:
                errors.append(f"simulation.{name} must be positive")
        if sim.max_steps <= 0:
            errors.append("simulation.max_steps must be positive")
        if sim.clearance < sim.r_agent:
            validation_results['warnings'].append(
                "simulation.clearance below r_agent: planned paths may graze walls")

        feat = cfg.features
        if feat.risk_radius <= 0:
            errors.append("features.risk_radius must be positive")
        if feat.compass_radius <= feat.risk_radius:
            errors.append("features.compass_radius must exceed features.risk_radius")
        if feat.compass_sectors < 2:
            errors.append("features.compass_sectors must be at least 2")

        enc = cfg.encounters
        for name in ('t_min', 'd_max', 't_front', 'theta_max', 'delta_slack', 't_view',
                     't_blind', 'fov', 'sight_range', 'min_displacement'):
            if getattr(enc, name) <= 0:
                errors.append(f"encounters.{name} must be positive")
        if enc.t_front > enc.t_min:
            errors.append("encounters.t_front must not exceed encounters.t_min")
        if enc.theta_max > math.pi:
            errors.append("encounters.theta_max must not exceed pi")

        gen = cfg.generation
        if gen.n_pedestrians < 0:
            errors.append("generation.n_pedestrians must be non-negative")
        if not 0 < gen.speed_min <= gen.speed_max:
            errors.append("generation speed range must satisfy 0 < speed_min <= speed_max")

        pol = cfg.policy
        unknown_tasks = [t for t in pol.tasks if t not in ('risk', 'compass')]
        if unknown_tasks:
            errors.append(f"policy.tasks contains unknown tasks: {unknown_tasks}")
        if len(set(pol.tasks)) != len(pol.tasks):
            errors.append("policy.tasks must not repeat a task")
        if pol.sigma_floor <= 0:
            errors.append("policy.sigma_floor must be positive")

        tr = cfg.training
        if tr.learning_rate < 0:
            errors.append("training.learning_rate must be non-negative")
        if not 0 < tr.gamma <= 1:
            errors.append("training.gamma must be in (0, 1]")
        if tr.n_steps <= 0 or tr.num_envs <= 0 or tr.aux_horizon <= 0:
            errors.append("training n_steps, num_envs and aux_horizon must be positive")

        valid_log_levels = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']
        if cfg.logging_settings.log_level not in valid_log_levels:
            errors.append(f"Log level must be one of: {valid_log_levels}")
        if cfg.jobs < 1:
            errors.append("jobs must be at least 1")

        run = cfg.run
        if run.n_episodes is not None and run.n_episodes < 0:
            errors.append("run.n_episodes must be non-negative")
        if not run.policy:
            errors.append("run.policy must name a policy or a checkpoint")

        validation_results['valid'] = not errors
        return validation_results

    def require_valid(self) -> SocialNavConfig:
        """Validate and raise ConfigError listing every problem"""
        result = self.validate_config()
        for warning in result['warnings']:
            self.logger.warning(warning)
        if not result['valid']:
            raise ConfigError("; ".join(result['errors']))
        return self.config

    def get_environment_overrides(self, environ: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
        """Get configuration overrides from SOCNAV_ environment variables"""
        environ = os.environ if environ is None else environ
        overrides: Dict[str, Any] = {}
        for var, (section, key, caster) in _ENV_OVERRIDES.items():
            raw = environ.get(var)
            if raw is None or raw == '':
                continue
            try:
                value = caster(raw)
            except ValueError:
                raise ConfigError(f"Environment variable {var} has invalid value {raw!r}")
            if section is None:
                overrides[key] = value
            else:
                overrides.setdefault(section, {})[key] = value
        return overrides

    def apply_environment_overrides(self, environ: Optional[Dict[str, str]] = None) -> None:
        """Apply environment variable overrides to configuration"""
        overrides = self.get_environment_overrides(environ)
        if overrides:
            self.update_config(overrides)
            self.logger.info(f"Applied {len(overrides)} environment overrides")


def setup_logging(config: SocialNavConfig) -> None:
    """Setup logging based on configuration"""
    log_settings = config.logging_settings

    formatter = logging.Formatter(log_settings.log_format)
    handlers = []

    if log_settings.log_file:
        file_handler = logging.handlers.RotatingFileHandler(
            log_settings.log_file,
            maxBytes=log_settings.max_file_size_mb * 1024 * 1024,
            backupCount=log_settings.backup_count
        )
        file_handler.setFormatter(formatter)
        handlers.append(file_handler)

    if log_settings.console_output or not handlers:
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        handlers.append(console_handler)

    logging.basicConfig(
        level=getattr(logging, log_settings.log_level),
        handlers=handlers,
        force=True
    )
