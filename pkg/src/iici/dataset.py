"""Synthetic multi-camera re-ID data with planted camera style bias.

Observations follow ``x = light_{c,s} * gain_c * (id_vector_y + style_offset_{c,s} + noise)``
where ``light_{c,s}`` is a scalar illumination level per planted style, so that camera style is linearly separable from identity and ground-truth
style clusters are available for diagnostics.
"""

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .rng import substream

FORMAT_VERSION = 1
_BIN_MAGIC = b"IICIDS"
_BIN_HEADER = struct.Struct("<BIIIIB")  # version, Y, C, N, D_raw, sct
_BIN_LABELS = struct.Struct("<iiii")  # y, c, u, style
_CSV_TAG = "iici-dataset"


class DatasetFormatError(ValueError):
    pass


class HeaderError(DatasetFormatError):
    pass


class LabelRangeError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class Sample(NamedTuple):
    x: np.ndarray
    y: int
    c: int
    u: int
    style_truth: int


@dataclass
class SynthConfig:
    num_ids: int = 60
    num_cameras: int = 4
    images_per_id: int = 8  # per camera, before the SCT split
    D_raw: int = 32
    id_signal_scale: float = 1.0
    camera_bias_scale: float = 2.0
    camera_gain_jitter: float = 0.1
    styles_per_camera: int = 2
    style_gain_spread: float = 0.5  # log-gain gap between adjacent planted styles
    noise_scale: float = 0.3
    seed: int = 0

    def validate(self):
        for name in ("num_ids", "num_cameras", "images_per_id", "D_raw", "styles_per_camera"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("id_signal_scale", "camera_bias_scale", "camera_gain_jitter",
                     "style_gain_spread", "noise_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass
class Dataset:
    """Column-oriented sample store. ``X`` is float32 so files round-trip exactly."""

    X: np.ndarray
    y: np.ndarray
    c: np.ndarray
    Y: int
    C: int
    u: np.ndarray = None
    style_truth: np.ndarray = None
    sct: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.c = np.asarray(self.c, dtype=np.int64)
        n = len(self.y)
        self.u = np.full(n, -1, np.int64) if self.u is None else np.asarray(self.u, dtype=np.int64)
        if self.style_truth is None:
            self.style_truth = np.zeros(n, np.int64)
        self.style_truth = np.asarray(self.style_truth, dtype=np.int64)
        self.check()

    @property
    def N(self):
        return len(self.y)

    @property
    def D_raw(self):
        return self.X.shape[1]

    def __len__(self):
        return self.N

    def __getitem__(self, i):
        return Sample(self.X[i], int(self.y[i]), int(self.c[i]), int(self.u[i]), int(self.style_truth[i]))

    def check(self):
        n = len(self.y)
        if self.X.ndim != 2 or self.X.shape[0] != n:
            raise ValueError(f"X has shape {self.X.shape}, expected ({n}, D_raw)")
        for name in ("c", "u", "style_truth"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if n and (self.y.min() < 0 or self.y.max() >= self.Y):
            raise LabelRangeError(f"identity label outside [0, {self.Y})")
        if n and (self.c.min() < 0 or self.c.max() >= self.C):
            raise LabelRangeError(f"camera label outside [0, {self.C})")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("non-finite observation")

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], self.c[idx], self.Y, self.C,
                       u=self.u[idx], style_truth=self.style_truth[idx], sct=self.sct)

    def camera_images(self, cam):
        """Indices of D_c."""
        return np.flatnonzero(self.c == cam)

    def camera_ids(self, cam):
        """Z_c: sorted unique identities seen by camera ``cam``."""
        return np.unique(self.y[self.c == cam])

    def camera_membership(self):
        """Boolean (C, Y) matrix; entry [c, j] is True when j is in Z_c."""
        m = np.zeros((self.C, self.Y), bool)
        m[self.c, self.y] = True
        return m

    def ids_per_identity_cameras(self):
        return self.camera_membership().sum(axis=0)

    def id_camera(self):
        """Camera of each identity; valid only when every identity is single-camera."""
        m = self.camera_membership()
        if not np.all(m.sum(axis=0) == 1):
            raise ValueError("some identity appears in zero or several cameras")
        return m.argmax(axis=0)

    def equals(self, other):
        return (self.Y == other.Y and self.C == other.C and self.sct == other.sct
                and np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y)
                and np.array_equal(self.c, other.c) and np.array_equal(self.u, other.u)
                and np.array_equal(self.style_truth, other.style_truth))


def _style_assignment(num_ids, styles, rng):
    # balanced: each style gets floor/ceil(num_ids / styles) identities
    s = np.arange(num_ids) % styles
    return rng.permutation(s)


def generate_synthetic(cfg: SynthConfig, id_offset=0):
    """Multi-camera set: every identity observed ``images_per_id`` times in every camera.

    ``id_offset`` shifts the identity draw so that disjoint identity pools
    (e.g. a held-out test population) can come from the same config.
    """
    cfg.validate()
    rng = substream(cfg.seed, "data", id_offset)
    Y, C, K, D = cfg.num_ids, cfg.num_cameras, cfg.images_per_id, cfg.D_raw
    # camera-level quantities are drawn from a stream that ignores id_offset,
    # so train and test populations share the same cameras
    cam_rng = substream(cfg.seed, "data", 0xCA)
    offsets = cfg.camera_bias_scale * cam_rng.standard_normal((C, cfg.styles_per_camera, D))
    gains = 1.0 + cfg.camera_gain_jitter * cam_rng.standard_normal((C, D))
    gains = np.clip(gains, 0.05, None)
    # planted styles: evenly spaced illumination levels, randomly ordered per camera
    levels = cfg.style_gain_spread * (np.arange(cfg.styles_per_camera) - (cfg.styles_per_camera - 1) / 2)
    illum = np.exp(np.stack([cam_rng.permutation(levels) for _ in range(C)]))

    id_vecs = cfg.id_signal_scale * rng.standard_normal((Y, D))
    styles = np.stack([_style_assignment(Y, cfg.styles_per_camera, rng) for _ in range(C)])

    yy = np.repeat(np.arange(Y), C * K)
    cc = np.tile(np.repeat(np.arange(C), K), Y)
    ss = styles[cc, yy]
    noise = cfg.noise_scale * rng.standard_normal((Y * C * K, D))
    X = (illum[cc, ss][:, None] * gains[cc]) * (id_vecs[yy] + offsets[cc, ss] + noise)
    return Dataset(X, yy, cc, Y, C, style_truth=ss,
                   meta={"id_vectors": id_vecs, "offsets": offsets, "gains": gains, "illumination": illum})


def make_sct_split(ds: Dataset, seed):
    """Keep, for each identity, all images of one uniformly chosen camera."""
    rng = substream(seed, "split")
    keep = np.zeros(ds.N, bool)
    for ident in range(ds.Y):
        mask = ds.y == ident
        cams = np.unique(ds.c[mask])
        if len(cams) == 0:
            continue
        chosen = cams[0] if len(cams) == 1 else cams[rng.integers(len(cams))]
        keep |= mask & (ds.c == chosen)
    out = ds.subset(np.flatnonzero(keep))
    out.sct = True
    return out


def inject_overlap(sct: Dataset, full: Dataset, ratio, seed):
    """Add one extra camera's images for ``floor(ratio * Y)`` identities.

    The injected images get fresh identity labels ``Y, Y+1, ...``, so the
    result still has every label in a single camera.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"overlap ratio must lie in [0, 1], got {ratio}")
    n_pick = int(math.floor(ratio * sct.Y))
    if n_pick == 0:
        return sct.subset(np.arange(sct.N)) if sct.N else sct
    rng = substream(seed, "overlap")
    picked = np.sort(rng.choice(sct.Y, size=n_pick, replace=False))
    X, y, c, style = [sct.X], [sct.y], [sct.c], [sct.style_truth]
    new_label = sct.Y
    for ident in picked:
        own = np.unique(sct.c[sct.y == ident])
        others = np.setdiff1d(np.unique(full.c[full.y == ident]), own)
        if len(others) == 0:
            continue
        extra_cam = others[rng.integers(len(others))]
        idx = np.flatnonzero((full.y == ident) & (full.c == extra_cam))
        X.append(full.X[idx])
        y.append(np.full(len(idx), new_label))
        c.append(full.c[idx])
        style.append(full.style_truth[idx])
        new_label += 1
    out = Dataset(np.concatenate(X), np.concatenate(y), np.concatenate(c), new_label, sct.C,
                  style_truth=np.concatenate(style), sct=True)
    return out


def make_test_partition(cfg: SynthConfig, num_test_ids, images_per_camera=None):
    """Held-out query/gallery over identities never seen in training.

    Per identity and camera the first image goes to the query set and the
    rest to the gallery, so every query has cross-camera positives.
    """
    tcfg = SynthConfig(**{**cfg.__dict__, "num_ids": num_test_ids,
                          "images_per_id": images_per_camera or cfg.images_per_id})
    full = generate_synthetic(tcfg, id_offset=1)
    first = np.zeros(full.N, bool)
    seen = set()
    for i in range(full.N):
        key = (full.y[i], full.c[i])
        if key not in seen:
            seen.add(key)
            first[i] = True
    return full.subset(np.flatnonzero(first)), full.subset(np.flatnonzero(~first))


# -- persistence ------------------------------------------------------------

def save_dataset(ds: Dataset, path):
    path = Path(path)
    if path.suffix == ".csv":
        _save_csv(ds, path)
    else:
        _save_bin(ds, path)


def load_dataset(path):
    path = Path(path)
    if path.suffix == ".csv":
        return _load_csv(path)
    return _load_bin(path)


def _save_bin(ds, path):
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(_BIN_HEADER.pack(FORMAT_VERSION, ds.Y, ds.C, ds.N, ds.D_raw, int(ds.sct)))
        x = ds.X.astype("<f4")
        for i in range(ds.N):
            fh.write(_BIN_LABELS.pack(int(ds.y[i]), int(ds.c[i]), int(ds.u[i]), int(ds.style_truth[i])))
            fh.write(x[i].tobytes())


def _load_bin(path):
    raw = Path(path).read_bytes()
    hdr_end = len(_BIN_MAGIC) + _BIN_HEADER.size
    if len(raw) < hdr_end or not raw.startswith(_BIN_MAGIC):
        raise HeaderError(f"{path}: missing or malformed dataset header")
    version, Y, C, N, D, sct = _BIN_HEADER.unpack_from(raw, len(_BIN_MAGIC))
    if version != FORMAT_VERSION:
        raise HeaderError(f"{path}: unsupported dataset version {version}")
    rec = _BIN_LABELS.size + 4 * D
    body = raw[hdr_end:]
    if len(body) < N * rec:
        raise TruncatedFileError(f"{path}: expected {N} records, file holds {len(body) // rec}")
    dt = np.dtype([("lab", "<i4", 4), ("x", "<f4", D)])
    arr = np.frombuffer(body, dtype=dt, count=N)
    lab = arr["lab"].astype(np.int64)
    _check_labels(path, lab[:, 0], lab[:, 1], Y, C)
    return Dataset(arr["x"].astype(np.float32), lab[:, 0], lab[:, 1], Y, C,
                   u=lab[:, 2], style_truth=lab[:, 3], sct=bool(sct))


def _save_csv(ds, path):
    with open(path, "w") as fh:
        fh.write(f"{_CSV_TAG},{FORMAT_VERSION}\n")
        fh.write(f"{ds.Y},{ds.C},{ds.N},{ds.D_raw},{int(ds.sct)}\n")
        for i in range(ds.N):
            xs = ",".join(repr(float(v)) for v in ds.X[i])
            fh.write(f"{ds.y[i]},{ds.c[i]},{ds.u[i]},{ds.style_truth[i]},{xs}\n")


def _load_csv(path):
    lines = Path(path).read_text().splitlines()
    try:
        tag, version = lines[0].split(",")
        if tag != _CSV_TAG:
            raise ValueError(tag)
        Y, C, N, D, sct = (int(v) for v in lines[1].split(","))
    except (IndexError, ValueError) as exc:
        raise HeaderError(f"{path}: missing or malformed dataset header") from exc
    if int(version) != FORMAT_VERSION:
        raise HeaderError(f"{path}: unsupported dataset version {version}")
    records = [ln for ln in lines[2:] if ln.strip()]
    if len(records) < N:
        raise TruncatedFileError(f"{path}: expected {N} records, file holds {len(records)}")
    lab = np.zeros((N, 4), np.int64)
    X = np.zeros((N, D), np.float32)
    for i, ln in enumerate(records[:N]):
        parts = ln.split(",")
        if len(parts) != 4 + D:
            raise TruncatedFileError(f"{path}: record {i} has {len(parts)} fields, expected {4 + D}")
        lab[i] = [int(p) for p in parts[:4]]
        X[i] = [np.float32(p) for p in parts[4:]]
    _check_labels(path, lab[:, 0], lab[:, 1], Y, C)
    return Dataset(X, lab[:, 0], lab[:, 1], Y, C, u=lab[:, 2], style_truth=lab[:, 3], sct=bool(sct))


def _check_labels(path, y, c, Y, C):
    if len(y) and (y.min() < 0 or y.max() >= Y):
        raise LabelRangeError(f"{path}: identity label outside [0, {Y})")
    if len(c) and (c.min() < 0 or c.max() >= C):
        raise LabelRangeError(f"{path}: camera label outside [0, {C})")
