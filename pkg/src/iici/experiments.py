"""End-to-end runs: synthesize, split, train a variant, evaluate, probe."""

from dataclasses import dataclass, field

import numpy as np

from . import dataset as dsmod
from .config import RunConfig
from .evaluation import camera_probe, evaluate, extract, mcnl_order_rate
from .rng import substream
from .trainer import VARIANTS, init_state, pk_sample, run_epoch


@dataclass
class Benchmark:
    train_full: dsmod.Dataset
    train: dsmod.Dataset  # SCT split, possibly with injected overlap
    query: dsmod.Dataset
    gallery: dsmod.Dataset


@dataclass
class RunResult:
    variant: str
    seed: int
    mAP: float
    cmc: dict
    probe_acc: float
    probe_chance: float
    order_rate: float
    order_rate_init: float
    probe_acc_init: float
    epoch_losses: list = field(default_factory=list)
    SC: int = 0
    state: object = field(default=None, repr=False)

    @property
    def R1(self):
        return self.cmc[1]

    def row(self):
        return {"variant": self.variant, "seed": self.seed, "mAP": self.mAP, "R1": self.cmc[1],
                "R5": self.cmc[5], "R10": self.cmc[10], "probe_acc": self.probe_acc,
                "order_rate": self.order_rate}


def make_benchmark(cfg: RunConfig, seed=None, overlap=None):
    seed = cfg.seed if seed is None else seed
    overlap = cfg.overlap_ratio if overlap is None else overlap
    synth = cfg.synth(seed)
    full = dsmod.generate_synthetic(synth)
    sct = dsmod.make_sct_split(full, seed)
    if overlap:
        sct = dsmod.inject_overlap(sct, full, overlap, seed)
    query, gallery = dsmod.make_test_partition(synth, cfg.num_test_ids, cfg.test_images_per_camera)
    return Benchmark(full, sct, query, gallery)


def order_rate(state, ds, cfg: RunConfig, seed):
    E = extract(ds, state.params)
    rng = substream(seed, "probe", 1)
    return mcnl_order_rate(E, ds.y, ds.c, lambda: pk_sample(ds.y, cfg.P, cfg.K, rng), cfg.order_trials)


def probe(state, query, gallery, cfg: RunConfig, seed):
    E = np.vstack([extract(query, state.params), extract(gallery, state.params)])
    cams = np.concatenate([query.c, gallery.c])
    return camera_probe(E, cams, seed=seed, method=cfg.probe_method)


def evaluate_state(state, query, gallery):
    Eq, Eg = extract(query, state.params), extract(gallery, state.params)
    return evaluate(Eq, query.y, query.c, Eg, gallery.y, gallery.c)


def run_variant(bench: Benchmark, cfg: RunConfig, variant=None, seed=None, on_record=None):
    """Train ``variant`` on ``bench.train`` and evaluate cross-camera retrieval."""
    seed = cfg.seed if seed is None else seed
    tcfg = cfg.train(seed, variant)
    state = init_state(bench.train, tcfg)
    rate0 = order_rate(state, bench.train, cfg, seed)
    probe0 = probe(state, bench.query, bench.gallery, cfg, seed)
    epoch_losses = []
    for _ in range(tcfg.epochs):
        rec = run_epoch(state, bench.train, tcfg, on_record=on_record)
        epoch_losses.append(rec["mean_loss"])
    res = evaluate_state(state, bench.query, bench.gallery)
    pr = probe(state, bench.query, bench.gallery, cfg, seed)
    return RunResult(tcfg.variant, seed, res.mAP, res.cmc, pr.accuracy, pr.chance,
                     order_rate(state, bench.train, cfg, seed), rate0, probe0.accuracy,
                     epoch_losses, int(state.env.SC), state)


def summarize(rows, key):
    vals = np.array([r[key] for r in rows], dtype=float)
    return float(vals.mean()), float(vals.std())


def ablate(cfg: RunConfig, seeds, variants=VARIANTS, progress=None):
    """Every variant on every seed; returns per-run rows and a per-variant summary."""
    runs = []
    for seed in seeds:
        bench = make_benchmark(cfg, seed)
        for v in variants:
            r = run_variant(bench, cfg, v, seed)
            runs.append(r.row())
            if progress:
                progress(r)
    table = []
    for v in variants:
        rows = [r for r in runs if r["variant"] == v]
        r1, r1s = summarize(rows, "R1")
        m, ms = summarize(rows, "mAP")
        table.append({"variant": v, "R1_mean": r1, "R1_std": r1s, "mAP_mean": m, "mAP_std": ms,
                      "n_seeds": len(rows)})
    return runs, table


SWEEP_PARAMS = ("K1", "K2", "subcam", "overlap")


def sweep_config(cfg: RunConfig, param, value):
    if param == "K1":
        return cfg.updated(K1=int(value)), None
    if param == "K2":
        return cfg.updated(K2=int(value)), None
    if param == "subcam":
        # exactly `value` environments per camera (fewer only when a camera has fewer ids)
        value = int(value)
        if value < 1:
            raise ValueError("sub-camera count must be >= 1")
        return cfg.updated(ids_per_env=1, max_splits=value, env_split_enabled=value > 1), None
    if param == "overlap":
        return cfg, float(value)
    raise ValueError(f"unknown sweep parameter {param!r}; expected one of {', '.join(SWEEP_PARAMS)}")


def sweep(cfg: RunConfig, param, values, seeds, variant=None, progress=None):
    """One curve point per value: mean/std of R1 and mAP over ``seeds``."""
    runs, curve = [], []
    for value in values:
        vcfg, overlap = sweep_config(cfg, param, value)
        rows = []
        for seed in seeds:
            bench = make_benchmark(vcfg, seed, overlap)
            r = run_variant(bench, vcfg, variant, seed)
            rows.append({**r.row(), "param": param, "value": value, "SC": r.SC})
            if progress:
                progress(r)
        runs.extend(rows)
        r1, r1s = summarize(rows, "R1")
        m, ms = summarize(rows, "mAP")
        sc = int(round(np.mean([r["SC"] for r in rows])))
        curve.append({"param": param, "value": value, "R1_mean": r1, "R1_std": r1s,
                      "mAP_mean": m, "mAP_std": ms, "SC": sc, "n_seeds": len(rows)})
    return runs, curve

