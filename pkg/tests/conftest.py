import numpy as np
import pytest

from iici.memory import PrototypeBank


def unit_rows(A):
    return A / np.linalg.norm(A, axis=1, keepdims=True)


class RandomBatch:
    """SCT-style batch: every identity lives in one camera and one environment."""

    def __init__(self, rng, n=32, Y=12, C=3, d=6, envs_per_cam=2, per_id=4):
        self.Y, self.C = Y, C
        self.id_cam = np.arange(Y) % C
        rng.shuffle(self.id_cam)
        self.id_env = self.id_cam * envs_per_cam + rng.integers(0, envs_per_cam, Y)
        self.SC = C * envs_per_cam
        ids = rng.choice(Y, size=max(1, n // per_id), replace=Y < n // per_id)
        y = np.repeat(ids, per_id)[:n]
        if len(y) < n:
            y = np.concatenate([y, rng.integers(0, Y, n - len(y))])
        self.y = y
        self.c = self.id_cam[y]
        self.u = self.id_env[y]
        self.weak = unit_rows(rng.standard_normal((n, d)))
        self.strong = unit_rows(rng.standard_normal((n, d)))
        self.bank = PrototypeBank(unit_rows(rng.standard_normal((Y, d))))

    @property
    def cam_members(self):
        m = np.zeros((self.C, self.Y), bool)
        m[self.id_cam, np.arange(self.Y)] = True
        return m

    @property
    def env_members(self):
        m = np.zeros((self.SC, self.Y), bool)
        m[self.id_env, np.arange(self.Y)] = True
        return m

    def scope_ids(self, members):
        return {s: [int(j) for j in np.flatnonzero(members[s])] for s in range(len(members))}

    def cam_sets(self):
        return {cam: set(np.flatnonzero(self.id_cam == cam).tolist()) for cam in range(self.C)}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_batch():
    return RandomBatch
