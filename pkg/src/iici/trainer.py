"""Training loop: PK batches, weak/strong views, loss composition, Adam/SGD, memory updates."""

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import envsplit, losses
from .encoder import AugConfig, EncoderParams, augment_batch, backward, forward, init_params, read_arrays, write_arrays
from .losses import BatchView, LossConfig
from .memory import PrototypeBank, init_from_dataset
from .rng import substream

CKPT_VERSION = 1
_CKPT_MAGIC = b"IICISTATE"


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LossSelection:
    terms: frozenset
    K1: int = None  # overrides LossConfig.K1 when set
    memory_source: str = "weak"

    def __post_init__(self):
        unknown = set(self.terms) - {"base", "intra1", "intra2", "inter1", "inter2"}
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")
        if self.memory_source not in ("weak", "strong"):
            raise ValueError("memory_source must be 'weak' or 'strong'")

    @property
    def needs_strong(self):
        return "intra2" in self.terms


_VARIANTS = {
    "A1": LossSelection(frozenset({"base"})),
    "A2": LossSelection(frozenset({"intra1"})),
    # strong views replace the input, prototypes follow them
    "A3": LossSelection(frozenset({"intra2"}), memory_source="strong"),
    "A4": LossSelection(frozenset({"intra1", "intra2"})),
    "A5": LossSelection(frozenset({"inter1"}), K1=1),
    "A6": LossSelection(frozenset({"inter1"})),
    "A7": LossSelection(frozenset({"intra1", "inter1"})),
    "A8": LossSelection(frozenset({"intra1", "inter1", "inter2"})),
    "A9": LossSelection(frozenset({"intra1", "intra2", "inter1", "inter2"})),
}
VARIANTS = tuple(_VARIANTS)


def ablation_variant(name):
    try:
        return _VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}") from None


@dataclass
class TrainConfig:
    P: int = 16
    K: int = 4
    epochs: int = 30
    lr: float = 0.00035
    lr_decay_every: int = 20
    lr_decay_factor: float = 0.1
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9  # sgd only
    mu: float = 0.2
    loss: LossConfig = field(default_factory=LossConfig)
    env: envsplit.EnvConfig = field(default_factory=envsplit.EnvConfig)
    env_split_enabled: bool = True
    aug: AugConfig = field(default_factory=AugConfig)
    variant: str = "A9"
    hidden: int = 64
    dim: int = 32
    seed: int = 0

    @property
    def batch_size(self):
        return self.P * self.K

    def validate(self):
        if self.P < 1 or self.K < 1:
            raise ValueError("P and K must be >= 1")
        if self.lr < 0 or self.lr_decay_factor <= 0 or self.lr_decay_every < 1:
            raise ValueError("learning-rate schedule values must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        ablation_variant(self.variant)


def lr_at(cfg: TrainConfig, epoch):
    return cfg.lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


class Optimizer:
    def __init__(self, params, cfg: TrainConfig):
        self.kind = cfg.optimizer
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]

    def step(self, params, grads, lr):
        self.t += 1
        cfg = self.cfg
        for k, (p, g) in enumerate(zip(params.arrays(), grads.arrays())):
            if self.kind == "adam":
                self.m[k] = cfg.beta1 * self.m[k] + (1 - cfg.beta1) * g
                self.v[k] = cfg.beta2 * self.v[k] + (1 - cfg.beta2) * g * g
                mhat = self.m[k] / (1 - cfg.beta1 ** self.t)
                vhat = self.v[k] / (1 - cfg.beta2 ** self.t)
                p -= lr * mhat / (np.sqrt(vhat) + cfg.eps)
            else:
                self.m[k] = cfg.momentum * self.m[k] + g
                p -= lr * self.m[k]


@dataclass
class TrainState:
    params: object
    opt: Optimizer
    bank: PrototypeBank
    env: envsplit.EnvironmentAssignment
    sampler_rng: np.random.Generator
    augment_rng: np.random.Generator
    epoch: int = 0
    history: list = field(default_factory=list)


def pk_sample(labels, P, K, rng):
    """P distinct identities (all if fewer), K images each; with replacement only when short."""
    labels = np.asarray(labels)
    ids = np.unique(labels)
    if ids.size == 0:
        raise ValueError("cannot sample from an empty dataset")
    chosen = rng.choice(ids, size=min(P, ids.size), replace=False)
    out = []
    for ident in chosen:
        pool = np.flatnonzero(labels == ident)
        out.append(rng.choice(pool, size=K, replace=pool.size < K))
    return np.concatenate(out)


def init_state(ds, cfg: TrainConfig):
    cfg.validate()
    params = init_params(ds.D_raw, cfg.hidden, cfg.dim, substream(cfg.seed, "init"))
    bank = init_from_dataset(ds, params, cfg.mu)
    env = envsplit.camera_assignment(ds.id_camera())
    return TrainState(params, Optimizer(params, cfg), bank, env,
                      substream(cfg.seed, "sampler"), substream(cfg.seed, "augment"))


def _scopes(state, ds, cfg, y):
    if cfg.env_split_enabled:
        return state.env.sample_envs(y), state.env.members()
    cams = ds.id_camera()
    return cams[y], losses.scope_membership(np.arange(ds.Y), cams, ds.C, ds.Y)


def train_step(state: TrainState, idx, ds, cfg: TrainConfig, selection: LossSelection = None):
    """One forward/backward/update on the batch ``idx``; returns per-term loss values."""
    sel = selection or ablation_variant(cfg.variant)
    lcfg = cfg.loss
    X = ds.X[idx]
    y = ds.y[idx]
    c = ds.c[idx]
    weak_x = augment_batch(X, state.augment_rng, cfg.aug)
    strong_x = augment_batch(X, state.augment_rng, cfg.aug, strong=True) if sel.needs_strong else None

    cache_w = forward(state.params, weak_x)
    cache_s = forward(state.params, strong_x) if strong_x is not None else None
    Fw = cache_w.e
    Fs = cache_s.e if cache_s is not None else None
    u, members = _scopes(state, ds, cfg, y)
    cam_members = ds.camera_membership()

    gw = np.zeros_like(Fw)
    gs = np.zeros_like(Fs) if Fs is not None else None
    terms = {}
    if "base" in sel.terms:
        terms["base"], g = losses.loss_base(Fw, y, state.bank, lcfg)
        gw += g
    if "intra1" in sel.terms:
        terms["intra1"], g = losses.loss_intra_env(Fw, y, u, members, state.bank, lcfg)
        gw += g
    if "intra2" in sel.terms:
        terms["intra2"], g = losses.loss_intra_aug(Fs, y, u, members, state.bank, lcfg)
        gs += g
    if "inter1" in sel.terms:
        terms["inter1"], g = losses.loss_inter1(Fw, y, c, lcfg, K1=sel.K1)
        gw += g
    if "inter2" in sel.terms:
        terms["inter2"], g = losses.loss_inter2(Fw, y, c, state.bank, cam_members, lcfg)
        gw += g
    total = float(sum(terms.values()))
    if not math.isfinite(total):
        raise NumericalError(f"non-finite loss at epoch {state.epoch}: {terms}")

    grads = backward(state.params, cache_w, gw)
    if gs is not None:
        gstrong = backward(state.params, cache_s, gs)
        grads = type(grads)(*(a + b for a, b in zip(grads.arrays(), gstrong.arrays())))
    lr = lr_at(cfg, state.epoch)
    state.opt.step(state.params, grads, lr)

    source = Fs if sel.memory_source == "strong" else Fw
    state.bank.update_batch(y, source)
    return {"loss": total, "lr": lr, **terms}


def run_epoch(state, ds, cfg, selection=None, on_record=None):
    sel = selection or ablation_variant(cfg.variant)
    if cfg.env_split_enabled:
        state.env = envsplit.refresh(ds, state.params, state.epoch, cfg.env)
    steps = math.ceil(ds.N / cfg.batch_size)
    losses_seen = []
    for step in range(steps):
        idx = pk_sample(ds.y, cfg.P, cfg.K, state.sampler_rng)
        rec = train_step(state, idx, ds, cfg, sel)
        rec = {"type": "step", "epoch": state.epoch, "step": step, **rec}
        losses_seen.append(rec["loss"])
        state.history.append(rec)
        if on_record:
            on_record(rec)
    rec = {"type": "epoch", "epoch": state.epoch, "mean_loss": float(np.mean(losses_seen)),
           "SC": int(state.env.SC), "lr": lr_at(cfg, state.epoch)}
    state.history.append(rec)
    if on_record:
        on_record(rec)
    state.epoch += 1
    return rec


def train(ds, cfg: TrainConfig, selection=None, on_record=None):
    """Full schedule from a fresh state; returns the final :class:`TrainState`."""
    state = init_state(ds, cfg)
    for _ in range(cfg.epochs):
        run_epoch(state, ds, cfg, selection, on_record)
    return state


# -- checkpoint ----------------------------------------------------------------

def _rng_state(rng):
    return rng.bit_generator.state


def save_checkpoint(state: TrainState, path):
    meta = {
        "epoch": state.epoch,
        "opt_kind": state.opt.kind,
        "opt_t": state.opt.t,
        "mu": state.bank.mu,
        "env_of_id": state.env.env_of_id.tolist(),
        "camera_of_env": state.env.camera_of_env.tolist(),
        "sampler_rng": _rng_state(state.sampler_rng),
        "augment_rng": _rng_state(state.augment_rng),
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC + bytes([CKPT_VERSION]))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        write_arrays(fh, state.params.arrays() + [state.bank.M] + state.opt.m + state.opt.v)


def load_checkpoint(path, cfg: TrainConfig = None):
    with open(path, "rb") as fh:
        head = fh.read(len(_CKPT_MAGIC) + 1)
        if head[:-1] != _CKPT_MAGIC or head[-1] != CKPT_VERSION:
            raise ValueError(f"{path}: not a training checkpoint (version {CKPT_VERSION})")
        (n,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(n))
        arrays = read_arrays(fh)
    params = EncoderParams(*arrays[:4])
    params.check()
    bank = PrototypeBank(arrays[4], meta["mu"])
    cfg = cfg or TrainConfig(optimizer=meta["opt_kind"])
    opt = Optimizer(params, cfg)
    opt.t = meta["opt_t"]
    opt.m = arrays[5:9]
    opt.v = arrays[9:13]
    env = envsplit.EnvironmentAssignment(np.array(meta["env_of_id"], np.int64),
                                         np.array(meta["camera_of_env"], np.int64))
    rngs = []
    for key in ("sampler_rng", "augment_rng"):
        g = np.random.Generator(np.random.PCG64())
        g.bit_generator.state = meta[key]
        rngs.append(g)
    return TrainState(params, opt, bank, env, *rngs, epoch=meta["epoch"])
