"""Sub-camera environments from K-means on per-identity style statistics."""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .encoder import encode
from .rng import substream


@dataclass
class EnvConfig:
    ids_per_env: int = 30
    max_splits: int = 4
    min_ids_for_split: int = 0  # 0 disables the small-camera guard
    per_unit_style: bool = False
    max_iters: int = 100
    seed: int = 0


@dataclass
class EnvironmentAssignment:
    env_of_id: np.ndarray  # (Y,) environment per identity
    camera_of_env: np.ndarray  # (SC,)

    @property
    def SC(self):
        return len(self.camera_of_env)

    def sample_envs(self, labels):
        return self.env_of_id[np.asarray(labels)]

    def members(self):
        """(SC, Y) boolean: Z'_u for each environment."""
        Y = len(self.env_of_id)
        m = np.zeros((self.SC, Y), bool)
        ok = self.env_of_id >= 0
        m[self.env_of_id[ok], np.flatnonzero(ok)] = True
        return m

    def env_images(self, labels, env):
        """Indices of D'_u for a label array."""
        return np.flatnonzero(self.sample_envs(labels) == env)

    def dump_csv(self, path, id_camera):
        lines = ["identity,camera,environment"]
        lines += [f"{j},{id_camera[j]},{self.env_of_id[j]}" for j in range(len(self.env_of_id))]
        Path(path).write_text("\n".join(lines) + "\n")


def camera_assignment(id_camera):
    """Degenerate split: one environment per camera."""
    id_camera = np.asarray(id_camera)
    C = int(id_camera.max()) + 1 if id_camera.size else 0
    return EnvironmentAssignment(id_camera.copy(), np.arange(C))


def compute_id_style(ds, params, per_unit=False):
    """Mean style descriptor of each identity's un-augmented images, shape (Y, s)."""
    _, S = encode(params, ds.X, per_unit_style=per_unit)
    counts = np.bincount(ds.y, minlength=ds.Y)
    if np.any(counts == 0):
        raise ValueError(f"identity {int(np.flatnonzero(counts == 0)[0])} has no images")
    sums = np.zeros((ds.Y, S.shape[1]))
    np.add.at(sums, ds.y, S)
    return sums / counts[:, None]


def _kmeanspp(points, k, rng):
    n = len(points)
    centers = [points[rng.integers(n)]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total == 0.0:
            nxt = int(rng.integers(n))
        else:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.uniform(0, total), side="right"))
            nxt = min(nxt, n - 1)
        centers.append(points[nxt])
        d2 = np.minimum(d2, np.sum((points - points[nxt]) ** 2, axis=1))
    return np.array(centers, dtype=np.float64)


def _assign(points, centers):
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1), d2


def kmeans(points, k, seed=0, max_iters=100):
    """Lloyd's algorithm from a seeded k-means++ start.

    Stops at an assignment fixpoint or after ``max_iters``. An emptied
    cluster takes the point farthest from its centre in the largest cluster.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    n = len(points)
    if n == 0:
        raise ValueError("no points to cluster")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    rng = substream(seed, "kmeans", k)
    centers = _kmeanspp(points, k, rng)
    labels, d2 = _assign(points, centers)
    for _ in range(max_iters):
        labels = _repair_empty(labels, d2, k)
        centers = np.array([points[labels == j].mean(axis=0) for j in range(k)])
        new_labels, d2 = _assign(points, centers)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return _repair_empty(labels, d2, k)


def _repair_empty(labels, d2, k):
    labels = labels.copy()
    for j in range(k):
        if np.any(labels == j):
            continue
        sizes = np.bincount(labels, minlength=k)
        big = int(sizes.argmax())
        cand = np.flatnonzero(labels == big)
        far = cand[np.argmax(d2[cand, big])]
        labels[far] = j
    return labels


def n_splits(n_ids, cfg: EnvConfig):
    if cfg.min_ids_for_split and n_ids < cfg.min_ids_for_split:
        return 1
    k = max(1, min(math.ceil(n_ids / cfg.ids_per_env), cfg.max_splits))
    return min(k, max(n_ids, 1))


def split_cameras(id_camera, style_vectors, cfg: EnvConfig, seed=None):
    """Cluster each camera's identities on their style vectors.

    Environment ids are contiguous, camera by camera, cluster by cluster.
    Identities whose camera is -1 (no images) stay unassigned.
    """
    id_camera = np.asarray(id_camera)
    seed = cfg.seed if seed is None else seed
    env_of_id = np.full(len(id_camera), -1, np.int64)
    cam_of_env = []
    C = int(id_camera.max()) + 1 if id_camera.size else 0
    for cam in range(C):
        ids = np.flatnonzero(id_camera == cam)
        if ids.size == 0:
            continue
        k = n_splits(len(ids), cfg)
        labels = kmeans(style_vectors[ids], k, seed=seed * 1000 + cam, max_iters=cfg.max_iters)
        base = len(cam_of_env)
        # relabel clusters by first appearance for stable ids
        _, first = np.unique(labels, return_index=True)
        order = np.argsort(first)
        remap = np.empty(k, np.int64)
        remap[np.unique(labels)[order]] = np.arange(len(order))
        env_of_id[ids] = base + remap[labels]
        cam_of_env.extend([cam] * len(order))
    return EnvironmentAssignment(env_of_id, np.array(cam_of_env, np.int64))


def refresh(ds, params, epoch, cfg: EnvConfig):
    """Recompute styles with the current encoder and re-split with seed ``cfg.seed + epoch``."""
    styles = compute_id_style(ds, params, cfg.per_unit_style)
    return split_cameras(ds.id_camera(), styles, cfg, seed=cfg.seed + epoch)


def agreement_up_to_relabel(pred, truth):
    """Best fraction of matching labels over one-to-one relabelings of ``pred``."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    P, T = np.unique(pred), np.unique(truth)
    table = np.array([[np.sum((pred == p) & (truth == t)) for t in T] for p in P])
    r, c = linear_sum_assignment(-table)
    return table[r, c].sum() / len(pred)
