"""Two-layer tanh perceptron with an L2-normalized output and hand-written backprop.

Batched throughout: inputs are (n, D_raw) arrays and every function also
accepts a single vector.
"""

import struct
from dataclasses import dataclass

import numpy as np

CKPT_VERSION = 1
_CKPT_MAGIC = b"IICIENC"


class DegenerateInputError(ArithmeticError):
    """Pre-normalization embedding has zero norm."""


@dataclass
class EncoderParams:
    W1: np.ndarray  # (H, D_raw)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (d, H)
    b2: np.ndarray  # (d,)

    NAMES = ("W1", "b1", "W2", "b2")

    @property
    def hidden(self):
        return self.W1.shape[0]

    @property
    def dim(self):
        return self.W2.shape[0]

    def arrays(self):
        return [getattr(self, n) for n in self.NAMES]

    def copy(self):
        return EncoderParams(*(a.copy() for a in self.arrays()))

    def check(self):
        H, D = self.W1.shape
        d = self.W2.shape[0]
        if self.b1.shape != (H,) or self.W2.shape != (d, H) or self.b2.shape != (d,):
            raise ValueError("inconsistent encoder parameter shapes")
        if not all(np.all(np.isfinite(a)) for a in self.arrays()):
            raise ValueError("non-finite encoder parameter")


def init_params(D_raw, hidden=64, dim=32, rng=None):
    rng = np.random.default_rng(0) if rng is None else rng
    W1 = rng.standard_normal((hidden, D_raw)) / np.sqrt(D_raw)
    W2 = rng.standard_normal((dim, hidden)) / np.sqrt(hidden)
    return EncoderParams(W1, np.zeros(hidden), W2, np.zeros(dim))


@dataclass
class ForwardCache:
    x: np.ndarray
    z1: np.ndarray
    h: np.ndarray
    z2: np.ndarray
    norm: np.ndarray
    e: np.ndarray


def style_descriptor(z1, per_unit=False):
    """Instance statistics of first-layer pre-activations.

    Pooled (default): ``[mean over units, std over units]``.
    Per-unit: ``[z1, |z1 - mean(z1)|]`` -- each unit's level and its
    absolute deviation from the layer mean, length ``2 * H``.
    """
    mu = z1.mean(axis=-1, keepdims=True)
    if per_unit:
        return np.concatenate([z1, np.abs(z1 - mu)], axis=-1)
    sd = z1.std(axis=-1, keepdims=True)
    return np.concatenate([mu, sd], axis=-1)


def forward(params: EncoderParams, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    z1 = X @ params.W1.T + params.b1
    h = np.tanh(z1)
    z2 = h @ params.W2.T + params.b2
    norm = np.linalg.norm(z2, axis=1)
    if np.any(norm == 0.0):
        bad = int(np.flatnonzero(norm == 0.0)[0])
        raise DegenerateInputError(f"zero-norm pre-embedding for input row {bad}")
    e = z2 / norm[:, None]
    return ForwardCache(X, z1, h, z2, norm, e)


def encode(params: EncoderParams, x, per_unit_style=False):
    """Unit-norm embedding(s) and style descriptor(s) for ``x``."""
    single = np.ndim(x) == 1
    cache = forward(params, x)
    style = style_descriptor(cache.z1, per_unit_style)
    if single:
        return cache.e[0], style[0]
    return cache.e, style


def normalize_backward(e, norm, grad_e):
    """Pull ``grad_e`` back through ``e = z / ||z||``: ``(I - e e^T) grad_e / ||z||``."""
    radial = np.sum(grad_e * e, axis=-1, keepdims=True)
    return (grad_e - radial * e) / np.asarray(norm)[..., None]


def backward(params: EncoderParams, x_or_cache, grad_e):
    """Parameter gradients for upstream ``grad_e`` (shape of the embeddings).

    Contributions are summed over rows in index order.
    """
    cache = x_or_cache if isinstance(x_or_cache, ForwardCache) else forward(params, x_or_cache)
    G = np.atleast_2d(np.asarray(grad_e, dtype=np.float64))
    gz2 = normalize_backward(cache.e, cache.norm, G)
    gW2 = gz2.T @ cache.h
    gb2 = gz2.sum(axis=0)
    gh = gz2 @ params.W2
    gz1 = gh * (1.0 - cache.h ** 2)
    gW1 = gz1.T @ cache.x
    gb1 = gz1.sum(axis=0)
    return EncoderParams(gW1, gb1, gW2, gb2)


# -- augmentation -------------------------------------------------------------

@dataclass
class AugConfig:
    weak_jitter: float = 0.05
    weak_mask_frac: float = 0.1
    strong_mask_frac: float = 0.25
    strong_gain_jitter: float = 0.3
    strong_offset_jitter: float = 0.3


def _mask_block(x, frac, rng):
    D = x.shape[-1]
    width = int(round(frac * D))
    if width <= 0:
        return x, np.zeros(D, bool)
    start = int(rng.integers(0, D - width + 1))
    mask = np.zeros(D, bool)
    mask[start:start + width] = True
    out = x.copy()
    out[..., mask] = 0.0
    return out, mask


def augment_weak(x, rng, cfg: AugConfig):
    """Small Gaussian jitter, then zero a random contiguous block of coordinates."""
    x = np.asarray(x, dtype=np.float64)
    jittered = x + cfg.weak_jitter * rng.standard_normal(x.shape)
    out, _ = _mask_block(jittered, cfg.weak_mask_frac, rng)
    return out


def augment_strong(x, rng, cfg: AugConfig, return_params=False):
    """``g * (x + delta)`` with a global gain ``g`` and offset ``delta``, then a larger masked block."""
    x = np.asarray(x, dtype=np.float64)
    jittered = x + cfg.weak_jitter * rng.standard_normal(x.shape)
    gain = 1.0 + cfg.strong_gain_jitter * rng.uniform(-1.0, 1.0)
    delta = cfg.strong_offset_jitter * rng.standard_normal()
    styled = gain * (jittered + delta)
    out, mask = _mask_block(styled, max(cfg.strong_mask_frac, cfg.weak_mask_frac), rng)
    if return_params:
        return out, {"gain": gain, "delta": delta, "mask": mask, "jittered": jittered}
    return out


def augment_batch(X, rng, cfg: AugConfig, strong=False):
    fn = augment_strong if strong else augment_weak
    return np.stack([fn(row, rng, cfg) for row in np.asarray(X, dtype=np.float64)])


# -- checkpoint ----------------------------------------------------------------

def write_arrays(fh, arrays):
    """Shapes plus little-endian float64 payloads."""
    fh.write(struct.pack("<I", len(arrays)))
    for a in arrays:
        a = np.asarray(a, dtype="<f8")
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(a.tobytes(order="C"))


def read_arrays(fh):
    (count,) = struct.unpack("<I", fh.read(4))
    out = []
    for _ in range(count):
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        buf = fh.read(8 * n)
        if len(buf) != 8 * n:
            raise ValueError("truncated checkpoint")
        out.append(np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64))
    return out


def save_params(params: EncoderParams, path):
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC + bytes([CKPT_VERSION]))
        write_arrays(fh, params.arrays())


def load_params(path):
    with open(path, "rb") as fh:
        head = fh.read(len(_CKPT_MAGIC) + 1)
        if head[:-1] != _CKPT_MAGIC or head[-1] != CKPT_VERSION:
            raise ValueError(f"{path}: not an encoder checkpoint (version {CKPT_VERSION})")
        arrays = read_arrays(fh)
    params = EncoderParams(*arrays)
    params.check()
    return params
