"""Class-prototype memory bank with moving-average updates."""

import numpy as np

from .encoder import encode


class DegeneratePrototypeError(ArithmeticError):
    pass


class PrototypeBank:
    """One unit-norm prototype per identity.

    Losses read ``M`` but never write it; :meth:`update` is the only mutator.
    """

    def __init__(self, M, mu=0.2):
        M = np.array(M, dtype=np.float64)
        if M.ndim != 2:
            raise ValueError("prototype matrix must be 2-D")
        if not 0.0 <= mu <= 1.0:
            raise ValueError(f"update rate must lie in [0, 1], got {mu}")
        norms = np.linalg.norm(M, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("prototype rows must be unit-norm")
        self.M = M
        self.mu = float(mu)

    @property
    def Y(self):
        return self.M.shape[0]

    @property
    def dim(self):
        return self.M.shape[1]

    def copy(self):
        return PrototypeBank(self.M.copy(), self.mu)

    def update(self, y, f):
        """``M[y] <- normalize(mu * M[y] + (1 - mu) * f)``."""
        y = int(y)
        if not 0 <= y < self.Y:
            raise IndexError(f"identity {y} outside [0, {self.Y})")
        if self.mu == 1.0:
            return  # renormalizing an already-unit row would only add rounding drift
        v = self.mu * self.M[y] + (1.0 - self.mu) * np.asarray(f, dtype=np.float64)
        n = np.linalg.norm(v)
        if n == 0.0:
            raise DegeneratePrototypeError(f"update of prototype {y} cancels to zero")
        self.M[y] = v / n

    def update_batch(self, labels, F):
        for y, f in zip(labels, F):
            self.update(y, f)

    def lookup(self, ids):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.Y):
            raise IndexError("prototype id out of range")
        return self.M[ids]

    def nearest_prototypes(self, f, mask=None):
        """``[(distance, id), ...]`` over ids selected by ``mask``, nearest first, ties to lower id."""
        ids = np.arange(self.Y) if mask is None else np.flatnonzero(mask)
        if ids.size == 0:
            return []
        dist = np.linalg.norm(self.M[ids] - np.asarray(f, dtype=np.float64), axis=1)
        order = np.lexsort((ids, dist))
        return [(float(dist[k]), int(ids[k])) for k in order]


def init_from_dataset(ds, params, mu=0.2):
    """Prototypes from normalized class means of un-augmented embeddings."""
    E, _ = encode(params, ds.X)
    d = E.shape[1]
    sums = np.zeros((ds.Y, d))
    np.add.at(sums, ds.y, E)
    counts = np.bincount(ds.y, minlength=ds.Y)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ValueError(f"identities without images: {missing[:10].tolist()}")
    norms = np.linalg.norm(sums, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise DegeneratePrototypeError(f"class {bad} has a zero mean embedding")
    return PrototypeBank(sums / norms[:, None], mu)
