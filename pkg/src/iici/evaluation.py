"""Cross-camera retrieval metrics and camera-invariance diagnostics."""

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.linear_model import LogisticRegression

from .encoder import encode
from .losses import mine_batch, pairwise_distances
from .rng import substream

CMC_RANKS = (1, 5, 10)


@dataclass
class RetrievalResult:
    mAP: float
    cmc: dict
    ap: np.ndarray = field(repr=False)
    num_valid_queries: int = 0
    num_dropped_queries: int = 0

    def to_dict(self):
        d = asdict(self)
        d["ap"] = [float(a) for a in self.ap]
        d["cmc"] = {str(k): float(v) for k, v in self.cmc.items()}
        return d


def extract(ds, params):
    """Un-augmented unit-norm embeddings in dataset order."""
    E, _ = encode(params, ds.X)
    return E


def evaluate(qf, ql, qc, gf, gl, gc, ranks=CMC_RANKS):
    """Single-query mAP and CMC, excluding same-identity same-camera gallery items.

    Gallery order breaks distance ties. Queries with no valid positive are
    dropped from both metrics and counted in ``num_dropped_queries``.
    """
    ql, qc, gl, gc = (np.asarray(a) for a in (ql, qc, gl, gc))
    if len(ql) == 0 or len(gl) == 0:
        raise ValueError("query and gallery must be non-empty")
    dist = pairwise_distances(np.asarray(qf, float), np.asarray(gf, float))
    aps, hits = [], np.zeros(max(ranks))
    dropped = 0
    for q in range(len(ql)):
        order = np.argsort(dist[q], kind="stable")
        keep = ~((gl[order] == ql[q]) & (gc[order] == qc[q]))
        matches = gl[order][keep] == ql[q]
        if not matches.any():
            dropped += 1
            continue
        hit_ranks = np.flatnonzero(matches) + 1
        # fsum is correctly rounded, so the result does not depend on summation order
        aps.append(math.fsum(np.arange(1, len(hit_ranks) + 1) / hit_ranks) / len(hit_ranks))
        if hit_ranks[0] <= len(hits):
            hits[hit_ranks[0] - 1:] += 1
    aps = np.asarray(aps, dtype=np.float64)
    nq = len(aps)
    cmc = {r: (hits[r - 1] / nq if nq else 0.0) for r in ranks}
    return RetrievalResult(math.fsum(aps) / nq if nq else 0.0, cmc, aps, nq, dropped)


def save_result(result: RetrievalResult, json_path=None, csv_path=None, **row):
    """Write the result as a JSON object and/or append one summary CSV row."""
    if json_path:
        Path(json_path).write_text(json.dumps({**row, **result.to_dict()}, indent=2, sort_keys=True))
    if csv_path:
        fields = ["run_id", "variant", "seed", "mAP", "R1", "R5", "R10", "probe_acc", "order_rate"]
        rec = {"mAP": result.mAP, "R1": result.cmc[1], "R5": result.cmc[5], "R10": result.cmc[10], **row}
        path = Path(csv_path)
        new = not path.exists()
        with open(path, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
            if new:
                w.writeheader()
            w.writerow(rec)


@dataclass
class ProbeResult:
    accuracy: float
    chance: float
    degenerate: bool = False


def camera_probe(E, cams, seed=0, method="logistic", train_frac=0.7):
    """Held-out accuracy of a classifier predicting camera from embedding."""
    E = np.asarray(E, dtype=np.float64)
    cams = np.asarray(cams)
    classes = np.unique(cams)
    if len(classes) <= 1:
        return ProbeResult(1.0, 1.0, degenerate=True)
    rng = substream(seed, "probe")
    train = np.zeros(len(cams), bool)
    for cl in classes:  # stratified split
        idx = rng.permutation(np.flatnonzero(cams == cl))
        train[idx[: max(1, int(round(train_frac * len(idx))))]] = True
    test = ~train
    if not test.any():
        raise ValueError("too few samples for a held-out split")
    if method == "ncm":
        means = np.stack([E[train & (cams == cl)].mean(axis=0) for cl in classes])
        pred = classes[pairwise_distances(E[test], means).argmin(axis=1)]
    elif method == "logistic":
        clf = LogisticRegression(max_iter=2000)
        clf.fit(E[train], cams[train])
        pred = clf.predict(E[test])
    else:
        raise ValueError(f"unknown probe method {method!r}")
    return ProbeResult(float(np.mean(pred == cams[test])), 1.0 / len(classes))


def mcnl_order_rate(E, labels, cams, sampler, trials=20):
    """Fraction of anchors with d(intra+) < d(cross-) < d(intra-) over sampled batches.

    ``sampler()`` returns an index array for one batch.
    """
    E = np.asarray(E, dtype=np.float64)
    labels = np.asarray(labels)
    cams = np.asarray(cams)
    good = total = 0
    for _ in range(trials):
        idx = np.asarray(sampler())
        m = mine_batch(E[idx], labels[idx], cams[idx])
        ok = m.has_pos & m.has_neg & m.has_cross
        d_cross = m.cross_dist[:, 0] if m.cross_dist.shape[1] else np.full(len(idx), np.inf)
        sat = (m.pos_dist < d_cross) & (d_cross < m.neg_dist)
        good += int(np.sum(sat & ok))
        total += int(ok.sum())
    if total == 0:
        raise ValueError("no anchor had a positive, an intra negative and a cross negative")
    return good / total
