"""Experiment configuration: a line-oriented ``key = value`` file.

Blank lines and ``#`` comments are ignored.  Unknown keys are rejected.
Relative paths are resolved against the directory holding the config file.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

PATH_KEYS = ("data_dir", "checkpoint", "loss_csv", "trajectory", "trace", "metrics")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    env: str = "pendulum"
    # data generation
    n_trajectories: int = 10
    T: int = 200
    controller: str = "random"
    image_size: int = 16
    dt: float = 0.05
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81
    damping: float = 0.1
    torque_scale: float = 5.0
    lg_decay: float = 0.9
    lg_angle: float = 0.3
    lg_control_gain: float = 0.1
    lg_q: float = 0.01
    lg_r: float = 0.1
    # model
    latent_dim: int = 4
    flow_layers: int = 4
    flow_hidden: int = 64
    mean_hidden: int = 64
    dyn_hidden: int = 32
    sigma: float = 1.0
    conditional: bool = False
    process_noise: float = 1e-4
    # training
    window: int = 8
    lr: float = 1e-3
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0
    dequantize: bool = True
    # filtering
    particles: int = 100
    resample_threshold: float = 0.5
    per_particle: bool = True
    likelihood: str = "flow"
    oracle: str = "truth"
    seed: int = 0
    # paths
    data_dir: str = "data"
    checkpoint: str = "model"
    loss_csv: str = "loss.csv"
    trajectory: str = ""
    trace: str = "trace.csv"
    metrics: str = "metrics.csv"

    def path(self, key: str) -> Path:
        return Path(getattr(self, key))

    def validate(self) -> "ExperimentConfig":
        choices = {
            "env": ("pendulum", "lingauss"),
            "controller": ("random", "zero", "sine"),
            "likelihood": ("flow", "true"),
            "oracle": ("truth", "kf"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {', '.join(allowed)}; got {getattr(self, key)!r}")
        for key in ("n_trajectories", "latent_dim", "particles"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be at least 1")
        if self.T < 0 or self.window < 0 or self.epochs < 0:
            raise ConfigError("T, window and epochs must be non-negative")
        if self.likelihood == "true" and self.env != "lingauss":
            raise ConfigError("likelihood = true is only available for env = lingauss")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        return self


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        kind = type(getattr(ExperimentConfig, key))
        try:
            values[key] = _bool(value) if kind is bool else kind(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
    cfg = ExperimentConfig(**values)
    if base_dir is not None:
        for key in PATH_KEYS:
            val = getattr(cfg, key)
            if val:
                setattr(cfg, key, str((base_dir / val).resolve()))
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.resolve().parent)


def format_config(cfg: ExperimentConfig) -> str:
    return "\n".join(f"{name} = {getattr(cfg, name)}" for name in _FIELDS) + "\n"
