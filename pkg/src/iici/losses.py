"""Prototype contrast and inter-camera ranking losses.

Every loss returns ``(value, grad)`` where ``grad`` is the gradient with
respect to the (unit-norm) embeddings it was given. Prototypes are read-only
constants here: no function in this module produces a gradient for ``M``.

Hinges use strict activity (``z > 0``), so the subgradient at the kink is 0.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class LossConfig:
    tau: float = 0.05
    m1: float = 0.1
    m2: float = 0.1
    K1: int = 10
    K2: int = 20

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.m1 < 0 or self.m2 < 0:
            raise ValueError("margins must be non-negative")
        if self.K1 < 1 or self.K2 < 1:
            raise ValueError("K1 and K2 must be >= 1")


@dataclass
class BatchView:
    weak: np.ndarray
    y: np.ndarray
    c: np.ndarray
    u: np.ndarray = None  # environment per sample; falls back to c
    strong: np.ndarray = None

    def __post_init__(self):
        self.y = np.asarray(self.y)
        self.c = np.asarray(self.c)
        self.u = self.c if self.u is None else np.asarray(self.u)
        n = len(self.y)
        if self.weak.shape[0] != n or len(self.c) != n or len(self.u) != n:
            raise ValueError("batch fields have unequal lengths")
        if self.strong is not None and self.strong.shape != self.weak.shape:
            raise ValueError("strong and weak embeddings differ in shape")


def scope_membership(y, scope, n_scopes, n_ids):
    """Boolean (n_scopes, n_ids) matrix marking which identities each scope holds."""
    m = np.zeros((n_scopes, n_ids), bool)
    m[np.asarray(scope), np.asarray(y)] = True
    return m


# -- prototype contrast -------------------------------------------------------

def _cross_entropy(logits, pos):
    """Per-row ``-log softmax(logits)[pos]`` and its gradient with respect to the logits.

    Written as ``log1p(sum_{j != pos} exp(l_j - l_pos))`` so that a confident
    row keeps full relative precision instead of cancelling to roundoff.
    """
    r = np.arange(len(pos))
    d = logits - logits[r, pos][:, None]
    d[r, pos] = -np.inf
    v = np.logaddexp.reduce(d, axis=1)
    nll = np.logaddexp(0.0, v)
    G = np.exp(d - nll[:, None])  # softmax probabilities of the other classes
    G[r, pos] = -G.sum(axis=1)
    return nll, G


def loss_base(F, y, bank, cfg: LossConfig):
    """Mean softmax cross-entropy against all Y prototypes."""
    M = bank.M
    n = len(y)
    nll, G = _cross_entropy(F @ M.T / cfg.tau, np.asarray(y))
    return float(np.mean(nll)), G @ M / (cfg.tau * n)


def loss_intra(F, y, scope, members, bank, cfg: LossConfig):
    """Scoped prototype contrast: sum over scopes of that scope's mean cross-entropy.

    Each sample is contrasted only with prototypes of identities in its own
    scope (a camera or a sub-camera environment). ``members[s]`` is the
    identity set of scope ``s``.
    """
    y = np.asarray(y)
    scope = np.asarray(scope)
    if not np.all(members[scope, y]):
        raise ValueError("a sample's identity is missing from its scope's identity set")
    M = bank.M
    S = F @ M.T / cfg.tau
    grad = np.zeros_like(F, dtype=np.float64)
    value = 0.0
    for s in np.unique(scope):
        rows = np.flatnonzero(scope == s)
        cols = np.flatnonzero(members[s])
        nll, G = _cross_entropy(S[np.ix_(rows, cols)], np.searchsorted(cols, y[rows]))
        value += float(np.mean(nll))
        grad[rows] += G @ M[cols] / (cfg.tau * len(rows))
    return value, grad


def loss_intra_env(F_weak, y, scope, members, bank, cfg: LossConfig):
    """Contrast of weak embeddings within camera or environment scopes."""
    return loss_intra(F_weak, y, scope, members, bank, cfg)


def loss_intra_aug(F_strong, y, scope, members, bank, cfg: LossConfig):
    """Same contrast on strongly-augmented embeddings against the (weak-fed) prototypes."""
    return loss_intra(F_strong, y, scope, members, bank, cfg)


def loss_env(batch: BatchView, bank, cfg: LossConfig, members):
    """Weak plus strong environment contrast; returns ``(value, (grad_weak, grad_strong))``."""
    v1, g_weak = loss_intra_env(batch.weak, batch.y, batch.u, members, bank, cfg)
    v2, g_strong = loss_intra_aug(batch.strong, batch.y, batch.u, members, bank, cfg)
    return v1 + v2, (g_weak, g_strong)


# -- mining -------------------------------------------------------------------

@dataclass
class MinedSets:
    pos_idx: np.ndarray  # hardest intra-camera positive, -1 if none
    pos_dist: np.ndarray
    neg_idx: np.ndarray  # hardest intra-camera negative, -1 if none
    neg_dist: np.ndarray
    cross_idx: np.ndarray  # (n, m) ascending by distance, padded with -1
    cross_dist: np.ndarray  # (n, m) padded with inf
    cross_count: np.ndarray

    @property
    def has_pos(self):
        return self.pos_idx >= 0

    @property
    def has_neg(self):
        return self.neg_idx >= 0

    @property
    def has_cross(self):
        return self.cross_count > 0


def pairwise_distances(A, B):
    diff = A[:, None, :] - B[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def mine_batch(F, y, c):
    """Batch-hard candidates per anchor.

    Hardest positive is the farthest same-identity same-camera instance,
    hardest intra negative the nearest different-identity same-camera one,
    and cross negatives are different-identity other-camera instances sorted
    ascending. Distance ties go to the lower batch index.
    """
    y = np.asarray(y)
    c = np.asarray(c)
    n = len(y)
    D = pairwise_distances(F, F)
    same_id = y[:, None] == y[None, :]
    same_cam = c[:, None] == c[None, :]
    not_self = ~np.eye(n, dtype=bool)
    pos_mask = same_id & same_cam & not_self
    neg_mask = ~same_id & same_cam
    cross_mask = ~same_id & ~same_cam

    pos_idx = np.where(pos_mask, D, -np.inf).argmax(axis=1)
    pos_idx = np.where(pos_mask.any(axis=1), pos_idx, -1)
    neg_idx = np.where(neg_mask, D, np.inf).argmin(axis=1)
    neg_idx = np.where(neg_mask.any(axis=1), neg_idx, -1)
    rows = np.arange(n)
    pos_dist = np.where(pos_idx >= 0, D[rows, pos_idx], np.nan)
    neg_dist = np.where(neg_idx >= 0, D[rows, neg_idx], np.nan)

    cross_count = cross_mask.sum(axis=1)
    width = int(cross_count.max()) if n else 0
    Dc = np.where(cross_mask, D, np.inf)
    cross_idx = np.argsort(Dc, axis=1, kind="stable")[:, :width]
    cross_dist = np.take_along_axis(Dc, cross_idx, axis=1)
    cross_idx = np.where(np.arange(width) < cross_count[:, None], cross_idx, -1)
    return MinedSets(pos_idx, pos_dist, neg_idx, neg_dist, cross_idx, cross_dist, cross_count)


# -- double hinge ---------------------------------------------------------------

def _ranking_hinge(d_pos, has_pos, d_cross, cross_valid, d_neg, has_neg, m1, m2):
    """Value and distance-coefficients of the summed double hinge.

    Anchors contribute when at least one hinge term is defined; the value is
    the mean over contributing anchors.
    """
    t1_ok = cross_valid & has_pos[:, None]
    t2_ok = cross_valid & has_neg[:, None]
    with np.errstate(invalid="ignore"):
        h1 = m1 + d_pos[:, None] - d_cross
        h2 = m2 + d_cross - d_neg[:, None]
    a1 = t1_ok & (h1 > 0)
    a2 = t2_ok & (h2 > 0)
    contributes = t1_ok.any(axis=1) | t2_ok.any(axis=1)
    count = int(contributes.sum())
    if count == 0:
        zeros = np.zeros(len(d_pos))
        return 0.0, zeros, np.zeros(d_cross.shape), zeros
    per_anchor = np.where(a1, h1, 0.0).sum(axis=1) + np.where(a2, h2, 0.0).sum(axis=1)
    value = float(per_anchor[contributes].sum() / count)
    c_pos = a1.sum(axis=1) / count
    c_cross = (a2.astype(float) - a1) / count
    c_neg = -a2.sum(axis=1) / count
    return value, c_pos, c_cross, c_neg


def _unit_diff(a, b):
    diff = a - b
    dist = np.linalg.norm(diff, axis=-1, keepdims=True)
    return np.divide(diff, dist, out=np.zeros_like(diff), where=dist > 0)


def _scatter_pair_grad(grad, F, anchors, others, coef):
    """Gradient of ``coef * ||F[a] - F[o]||`` added to both ends."""
    keep = (coef != 0) & (others >= 0)
    a, o, w = anchors[keep], others[keep], coef[keep]
    g = w[:, None] * _unit_diff(F[a], F[o])
    np.add.at(grad, a, g)
    np.add.at(grad, o, -g)


def _instance_hinge(F, y, c, cfg, K):
    mined = mine_batch(F, y, c)
    n = len(y)
    k = min(K, mined.cross_idx.shape[1])
    cross_idx = mined.cross_idx[:, :k]
    d_cross = mined.cross_dist[:, :k]
    valid = cross_idx >= 0
    value, c_pos, c_cross, c_neg = _ranking_hinge(
        np.nan_to_num(mined.pos_dist), mined.has_pos, d_cross, valid,
        np.nan_to_num(mined.neg_dist), mined.has_neg, cfg.m1, cfg.m2)
    grad = np.zeros((n, F.shape[1]))
    others = np.column_stack([mined.pos_idx, mined.neg_idx, cross_idx])
    coef = np.column_stack([c_pos, c_neg, c_cross])
    anchors = np.broadcast_to(np.arange(n)[:, None], others.shape)
    _scatter_pair_grad(grad, F, anchors.ravel(), others.ravel(), coef.ravel())
    return value, grad


def loss_mcnl(F, y, c, cfg: LossConfig):
    """Double hinge against the single hardest cross-camera negative."""
    return _instance_hinge(F, y, c, cfg, 1)


def loss_inter1(F, y, c, cfg: LossConfig, K1=None):
    """Double hinge summed over the K1 hardest cross-camera negatives in the batch."""
    return _instance_hinge(F, y, c, cfg, cfg.K1 if K1 is None else K1)


def loss_inter2(F, y, c, bank, cam_members, cfg: LossConfig):
    """Double hinge of each embedding against global prototypes.

    Positive: the anchor's own prototype. Intra negative: nearest prototype
    of another identity in the anchor's camera. Cross negatives: the K2
    nearest prototypes of identities outside the anchor's camera.
    """
    y = np.asarray(y)
    c = np.asarray(c)
    M = bank.M
    n, Y = len(y), bank.Y
    Dp = pairwise_distances(F, M)
    rows = np.arange(n)
    in_cam = cam_members[c]  # (n, Y)
    other = np.ones((n, Y), bool)
    other[rows, y] = False
    neg_mask = in_cam & other
    cross_mask = ~in_cam & other

    d_pos = Dp[rows, y]
    has_neg = neg_mask.any(axis=1)
    neg_id = np.where(neg_mask, Dp, np.inf).argmin(axis=1)
    d_neg = np.where(has_neg, Dp[rows, neg_id], 0.0)

    k = min(cfg.K2, int(cross_mask.sum(axis=1).max()) if n else 0)
    Dc = np.where(cross_mask, Dp, np.inf)
    cross_id = np.argsort(Dc, axis=1, kind="stable")[:, :k]
    d_cross = np.take_along_axis(Dc, cross_id, axis=1)
    valid = np.isfinite(d_cross)
    d_cross = np.where(valid, d_cross, 0.0)

    value, c_pos, c_cross, c_neg = _ranking_hinge(
        d_pos, np.ones(n, bool), d_cross, valid, d_neg, has_neg, cfg.m1, cfg.m2)
    grad = c_pos[:, None] * _unit_diff(F, M[y])
    grad += c_neg[:, None] * _unit_diff(F, M[neg_id])
    for j in range(k):
        grad += c_cross[:, j, None] * _unit_diff(F, M[cross_id[:, j]])
    return value, grad


def loss_inter(batch: BatchView, bank, cam_members, cfg: LossConfig):
    """Instance plus prototype inter-camera losses on weak embeddings only."""
    v1, g1 = loss_inter1(batch.weak, batch.y, batch.c, cfg)
    v2, g2 = loss_inter2(batch.weak, batch.y, batch.c, bank, cam_members, cfg)
    return v1 + v2, g1 + g2


def loss_overall(batch: BatchView, bank, cfg: LossConfig, env_members, cam_members):
    """Environment contrast plus inter-camera loss; returns ``(value, (grad_weak, grad_strong))``."""
    v_env, (g_weak, g_strong) = loss_env(batch, bank, cfg, env_members)
    v_inter, g_inter = loss_inter(batch, bank, cam_members, cfg)
    return v_env + v_inter, (g_weak + g_inter, g_strong)
