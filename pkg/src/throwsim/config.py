"""Run configuration: typed sections with strict YAML loading.

Every value that the method leaves unspecified (reward weights, assist
thresholds, controller gains, optimizer settings...) has a default here and
can be overridden from a YAML file. Unknown keys are rejected with the full
dotted path of the offending key.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_args, get_origin, get_type_hints

import yaml


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class RewardWeights:
    """Per-step reward weights and termination rewards."""

    c1: float = 10.0  # best-so-far distance progress
    c2: float = 1.0  # exp(-b1 err3d^2) proximity
    c3: float = 0.05  # action-rate penalty
    c4: float = 0.01  # action magnitude penalty after release
    b1: float = 0.5
    b2: float = 0.5
    p_term: float = -10.0  # collision or joint-limit termination
    w_term: float = 20.0  # landing bonus scale

    def validate(self, path="reward"):
        for name in ("c1", "c2", "c3", "c4"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{path}.{name} must be >= 0")
        for name in ("b1", "b2"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{path}.{name} must be > 0")
        if self.p_term >= 0:
            raise ConfigError(f"{path}.p_term must be < 0")


@dataclass
class EnvConfig:
    variant: str = "3d"
    controller: str = "id"  # "id" for training, "pid" for evaluation
    dt: float = 0.01
    decimation: int = 8
    max_steps: int = 100
    target_min_factor: float = 0.6  # r_min / r_max
    target_max_factor: float = 1.45  # r_hi / r_max
    release_threshold: float = 0.9
    assist: bool = True
    assist_probability: float = 0.05
    assist_distance: float = 1.5
    assist_speed: float = 0.5
    delay_mean: float = 0.258
    delay_std: float = 0.015
    delay_randomize: bool = False
    friction_upsilon: float = 0.03
    friction_eta: float = 0.1
    k_v: float = 15.0
    torque_limit_factor: float = 3.0
    pid_settle_time: float = 0.4
    command_scale_range: list = field(default_factory=lambda: [1.0, 1.0])
    command_noise_std: float = 0.0
    obs_noise_joint_pos: float = 0.0
    obs_noise_joint_vel: float = 0.0
    obs_noise_gripper_pos: float = 0.0
    obs_noise_gripper_vel: float = 0.0
    held_mass: float = 0.0
    reset_max_attempts: int = 1000
    reward_2d: RewardWeights = field(default_factory=RewardWeights)
    reward_3d: RewardWeights = field(default_factory=RewardWeights)

    @property
    def reward(self) -> RewardWeights:
        return self.reward_2d if self.variant == "2d" else self.reward_3d

    def validate(self, path="env"):
        if self.variant not in ("2d", "3d"):
            raise ConfigError(f"{path}.variant must be '2d' or '3d', got {self.variant!r}")
        if self.controller not in ("id", "pid"):
            raise ConfigError(f"{path}.controller must be 'id' or 'pid', got {self.controller!r}")
        if self.dt <= 0 or self.decimation < 1 or self.max_steps < 1:
            raise ConfigError(f"{path}: dt, decimation and max_steps must be positive")
        if not 0 < self.target_min_factor < self.target_max_factor:
            raise ConfigError(f"{path}.target_min_factor must be in (0, target_max_factor)")
        if len(self.command_scale_range) != 2 or not (
            self.command_scale_range[0] <= 1.0 <= self.command_scale_range[1]
        ):
            raise ConfigError(f"{path}.command_scale_range must be [lo, hi] containing 1")
        if not 0 <= self.assist_probability <= 1:
            raise ConfigError(f"{path}.assist_probability must be in [0, 1]")
        if self.delay_mean < 0 or self.delay_std < 0:
            raise ConfigError(f"{path}: delay mean/std must be >= 0")
        if self.friction_upsilon < 0 or self.friction_eta < 0:
            raise ConfigError(f"{path}: friction parameters must be >= 0")
        self.reward_2d.validate(f"{path}.reward_2d")
        self.reward_3d.validate(f"{path}.reward_3d")


@dataclass
class TrainConfig:
    n_envs: int = 8192
    iterations: int = 4000
    steps_per_iter: int = 32
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    learning_rate: float = 3e-4
    schedule: str = "fixed"  # or "adaptive" (KL-targeted learning rate)
    desired_kl: float = 0.01
    minibatches: int = 4
    epochs: int = 5
    entropy_coef: float = 0.005
    value_coef: float = 1.0
    max_grad_norm: float = 1.0
    init_log_std: float = 0.0
    obs_normalization: bool = True
    hidden: list = field(default_factory=lambda: [256, 128])
    checkpoint_every: int = 0  # 0: only the final checkpoint
    dtype: str = "float64"

    def validate(self, path="train"):
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ConfigError(f"{path}: gamma and lam must be in (0, 1]")
        if self.clip <= 0:
            raise ConfigError(f"{path}.clip must be > 0")
        if self.n_envs < 1 or self.steps_per_iter < 1 or self.iterations < 0:
            raise ConfigError(f"{path}: n_envs, steps_per_iter must be >= 1, iterations >= 0")
        if self.minibatches < 1 or self.epochs < 1:
            raise ConfigError(f"{path}: minibatches and epochs must be >= 1")
        if self.schedule not in ("fixed", "adaptive"):
            raise ConfigError(f"{path}.schedule must be 'fixed' or 'adaptive'")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"{path}.dtype must be 'float32' or 'float64'")


@dataclass
class SweepConfig:
    distances: list = field(default_factory=lambda: [7.5, 8.0, 8.5, 9.0, 9.5, 10.0])
    repeats: int = 200
    variant: str = "2d"
    controller: str = "pid"
    seed: int = 0
    randomize_init: bool = True

    def validate(self, path="sweep"):
        if self.repeats < 1:
            raise ConfigError(f"{path}.repeats must be >= 1")
        if not self.distances or any(d <= 0 for d in self.distances):
            raise ConfigError(f"{path}.distances must be a non-empty list of positive values")
        if self.variant not in ("2d", "3d"):
            raise ConfigError(f"{path}.variant must be '2d' or '3d'")
        if self.controller not in ("id", "pid"):
            raise ConfigError(f"{path}.controller must be 'id' or 'pid'")


@dataclass
class RunConfig:
    model: str = "nominal"  # "nominal" or a path to a machine YAML file
    seed: int = 0
    output_dir: str = "runs/default"
    workers: int = 1
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def validate(self, base_dir: Path | None = None):
        if self.model != "nominal":
            p = Path(self.model)
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            if not p.exists():
                raise ConfigError(f"model: machine model file not found: {p}")
            self.model = str(p)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.env.validate()
        self.train.validate()
        self.sweep.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown config key: {where}")
        kwargs[key] = _coerce(hints[key], value, where)
    return cls(**kwargs)


def _coerce(tp, value, where):
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    origin = get_origin(tp)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean, got {value!r}")
        return value
    if tp in (int, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        if tp is int and float(value) != int(value):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return tp(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if tp is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        return list(value)
    if get_args(tp):
        return value
    return value


def run_config_from_dict(data: dict | None, base_dir: Path | None = None) -> RunConfig:
    cfg = _build(RunConfig, data or {}, "")
    cfg.validate(base_dir)
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"config file {path} is not valid YAML: {e}") from None
    return run_config_from_dict(data, base_dir=path.parent)


def dump_run_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def sweep_config_from_dict(data: dict) -> SweepConfig:
    cfg = _build(SweepConfig, data or {}, "sweep")
    cfg.validate()
    return cfg
