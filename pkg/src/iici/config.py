"""Flat ``key = value`` run configuration.

Grammar: one assignment per line, ``#`` starts a comment, blank lines are
ignored, keys are the field names of :class:`RunConfig`. Booleans accept
``true/false/1/0/yes/no``. The ``IICI_SEED`` environment variable overrides
``seed``.
"""

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .dataset import SynthConfig
from .encoder import AugConfig
from .envsplit import EnvConfig
from .losses import LossConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data (desk-scale benchmark)
    num_ids: int = 60
    num_cameras: int = 4
    images_per_id: int = 8
    D_raw: int = 32
    id_signal_scale: float = 1.0
    camera_bias_scale: float = 1.0
    camera_gain_jitter: float = 0.1
    styles_per_camera: int = 2
    style_gain_spread: float = 1.0
    noise_scale: float = 0.3
    num_test_ids: int = 40
    test_images_per_camera: int = 4
    overlap_ratio: float = 0.0
    data_format: str = "bin"
    # optimisation (batch, schedule and loss values follow the published recipe)
    P: int = 16
    K: int = 4
    epochs: int = 30
    lr: float = 0.01
    lr_decay_every: int = 20
    lr_decay_factor: float = 0.1
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mu: float = 0.2
    tau: float = 0.05
    m1: float = 0.1
    m2: float = 0.1
    K1: int = 10
    K2: int = 20
    hidden: int = 64
    dim: int = 32
    # environments
    env_split_enabled: bool = True
    ids_per_env: int = 8
    max_splits: int = 2
    min_ids_for_split: int = 0
    per_unit_style: bool = False
    kmeans_max_iters: int = 100
    # augmentation
    weak_jitter: float = 0.05
    weak_mask_frac: float = 0.1
    strong_mask_frac: float = 0.25
    strong_gain_jitter: float = 0.3
    strong_offset_jitter: float = 0.3
    # evaluation
    probe_method: str = "logistic"
    order_trials: int = 20
    # run
    variant: str = "A9"
    seed: int = 0
    run_id: str = "run"
    out_dir: str = "out"

    def synth(self, seed=None):
        return SynthConfig(
            num_ids=self.num_ids, num_cameras=self.num_cameras, images_per_id=self.images_per_id,
            D_raw=self.D_raw, id_signal_scale=self.id_signal_scale,
            camera_bias_scale=self.camera_bias_scale, camera_gain_jitter=self.camera_gain_jitter,
            styles_per_camera=self.styles_per_camera, style_gain_spread=self.style_gain_spread,
            noise_scale=self.noise_scale, seed=self.seed if seed is None else seed)

    def train(self, seed=None, variant=None):
        seed = self.seed if seed is None else seed
        return TrainConfig(
            P=self.P, K=self.K, epochs=self.epochs, lr=self.lr, lr_decay_every=self.lr_decay_every,
            lr_decay_factor=self.lr_decay_factor, optimizer=self.optimizer, beta1=self.beta1,
            beta2=self.beta2, eps=self.eps, mu=self.mu,
            loss=LossConfig(tau=self.tau, m1=self.m1, m2=self.m2, K1=self.K1, K2=self.K2),
            env=EnvConfig(ids_per_env=self.ids_per_env, max_splits=self.max_splits,
                          min_ids_for_split=self.min_ids_for_split, per_unit_style=self.per_unit_style,
                          max_iters=self.kmeans_max_iters, seed=seed),
            env_split_enabled=self.env_split_enabled,
            aug=AugConfig(self.weak_jitter, self.weak_mask_frac, self.strong_mask_frac,
                          self.strong_gain_jitter, self.strong_offset_jitter),
            variant=variant or self.variant, hidden=self.hidden, dim=self.dim, seed=seed)

    def updated(self, **changes):
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, v in changes.items():
            if k not in kw:
                raise ConfigError(f"unknown config key {k!r}")
            kw[k] = _coerce(k, v)
        return RunConfig(**kw)


def published_recipe(**changes):
    """Published training recipe (100 epochs, lr 3.5e-4) on the desk benchmark."""
    return RunConfig(epochs=100, lr=0.00035).updated(**changes)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, value):
    kind = _TYPES[key]
    if not isinstance(value, str):
        return value
    try:
        if kind in (bool, "bool"):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind in (int, "int"):
            return int(value)
        if kind in (float, "float"):
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key}") from None
    return value.strip()


def parse_config(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = value
    return RunConfig().updated(**values)


def load_config(path=None, environ=None):
    cfg = parse_config(Path(path).read_text()) if path else RunConfig()
    environ = os.environ if environ is None else environ
    if environ.get("IICI_SEED"):
        cfg = cfg.updated(seed=environ["IICI_SEED"])
    return cfg


def dump_config(cfg: RunConfig):
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))
