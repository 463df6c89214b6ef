import numpy as np
import pytest

from gradcheck import fd_grad, kink_distance, rel_err
from iici import envsplit, losses
from iici.config import RunConfig
from iici.dataset import generate_synthetic, make_sct_split
from iici.encoder import EncoderParams, augment_batch, backward, forward, init_params
from iici.losses import BatchView, LossConfig
from iici.trainer import (
    VARIANTS, LossSelection, NumericalError, TrainConfig, ablation_variant, init_state, load_checkpoint,
    lr_at, pk_sample, run_epoch, save_checkpoint, train, train_step,
)


@pytest.fixture(scope="module")
def small_ds():
    cfg = RunConfig(num_ids=16, num_cameras=2, images_per_id=4, D_raw=8)
    return make_sct_split(generate_synthetic(cfg.synth(0)), 0)


def tcfg(**kw):
    base = dict(P=4, K=4, epochs=2, lr=0.01, hidden=12, dim=6, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_pk_batch_size():
    labels = np.repeat(np.arange(40), 5)
    idx = pk_sample(labels, 16, 4, np.random.default_rng(0))
    assert len(idx) == 64
    ids, counts = np.unique(labels[idx], return_counts=True)
    assert len(ids) == 16 and np.all(counts == 4)


def test_pk_short_identity_repeats():
    labels = np.array([0, 1, 1, 1, 1])
    idx = pk_sample(labels, 2, 4, np.random.default_rng(0))
    assert sorted(idx[labels[idx] == 0]) == [0, 0, 0, 0]


def test_pk_few_identities():
    labels = np.repeat(np.arange(8), 6)
    idx = pk_sample(labels, 16, 4, np.random.default_rng(0))
    assert len(idx) == 32 and len(np.unique(labels[idx])) == 8
    for ident in range(8):
        assert len(set(idx[labels[idx] == ident])) == 4  # no replacement when enough images


def test_pk_deterministic():
    labels = np.repeat(np.arange(20), 5)
    a = pk_sample(labels, 5, 3, np.random.default_rng(4))
    b = pk_sample(labels, 5, 3, np.random.default_rng(4))
    assert np.array_equal(a, b)


def test_variant_table():
    assert ablation_variant("A1").terms == {"base"}
    assert ablation_variant("A3").memory_source == "strong"
    assert ablation_variant("A5").K1 == 1 and ablation_variant("A5").terms == {"inter1"}
    assert ablation_variant("A6").K1 is None
    assert ablation_variant("A8").terms == {"intra1", "inter1", "inter2"}
    assert ablation_variant("A9").terms == {"intra1", "intra2", "inter1", "inter2"}
    assert ablation_variant("A9").memory_source == "weak"
    assert len(VARIANTS) == 9
    with pytest.raises(ValueError):
        ablation_variant("A10")
    with pytest.raises(ValueError):
        LossSelection(frozenset({"triplet"}))


def test_lr_schedule():
    cfg = TrainConfig(lr=0.00035)
    assert lr_at(cfg, 0) == 0.00035 and lr_at(cfg, 19) == 0.00035
    assert lr_at(cfg, 20) == pytest.approx(0.000035)
    assert lr_at(cfg, 40) == pytest.approx(0.0000035)


def test_defaults_follow_published_recipe():
    cfg = TrainConfig()
    assert (cfg.P, cfg.K, cfg.batch_size) == (16, 4, 64)
    assert (cfg.lr, cfg.lr_decay_every, cfg.lr_decay_factor) == (0.00035, 20, 0.1)
    assert (cfg.mu, cfg.loss.tau, cfg.loss.m1, cfg.loss.m2, cfg.loss.K1, cfg.loss.K2) == (0.2, 0.05, 0.1, 0.1, 10, 20)
    assert (cfg.beta1, cfg.beta2, cfg.eps) == (0.9, 0.999, 1e-8)


def test_config_validation():
    with pytest.raises(ValueError):
        tcfg(P=0).validate()
    with pytest.raises(ValueError):
        tcfg(optimizer="rmsprop").validate()
    with pytest.raises(ValueError):
        tcfg(variant="B2").validate()


def test_zero_epochs_returns_initial_state(small_ds):
    state = train(small_ds, tcfg(epochs=0))
    fresh = init_state(small_ds, tcfg(epochs=0))
    assert state.epoch == 0 and not state.history
    assert all(np.array_equal(a, b) for a, b in zip(state.params.arrays(), fresh.params.arrays()))


def test_zero_lr_freezes_params_but_memory_moves(small_ds):
    cfg = tcfg(lr=0.0)
    state = init_state(small_ds, cfg)
    before = state.params.copy()
    M0 = state.bank.M.copy()
    idx = pk_sample(small_ds.y, cfg.P, cfg.K, state.sampler_rng)
    train_step(state, idx, small_ds, cfg)
    assert all(np.array_equal(a, b) for a, b in zip(state.params.arrays(), before.arrays()))
    assert not np.array_equal(state.bank.M, M0)


def test_memory_rows_stay_unit_after_steps(small_ds):
    cfg = tcfg()
    state = init_state(small_ds, cfg)
    for _ in range(5):
        train_step(state, pk_sample(small_ds.y, cfg.P, cfg.K, state.sampler_rng), small_ds, cfg)
        assert np.all(np.abs(np.linalg.norm(state.bank.M, axis=1) - 1) <= 1e-6)


def _spy_memory(monkeypatch, state):
    seen = []
    orig = state.bank.update_batch

    def spy(labels, F):
        seen.append(np.array(F))
        orig(labels, F)
    monkeypatch.setattr(state.bank, "update_batch", spy)
    return seen


@pytest.mark.parametrize("variant, source", [("A4", "weak"), ("A9", "weak"), ("A3", "strong")])
def test_memory_update_source(small_ds, monkeypatch, variant, source):
    cfg = tcfg(variant=variant)
    state = init_state(small_ds, cfg)
    seen = _spy_memory(monkeypatch, state)
    idx = pk_sample(small_ds.y, cfg.P, cfg.K, state.sampler_rng)
    aug_state = state.augment_rng.bit_generator.state
    params0 = state.params.copy()
    train_step(state, idx, small_ds, cfg)
    # replay the augmentation draws to recover both views under the pre-step params
    g = np.random.default_rng()
    g.bit_generator.state = aug_state
    weak = forward(params0, augment_batch(small_ds.X[idx], g, cfg.aug)).e
    strong = forward(params0, augment_batch(small_ds.X[idx], g, cfg.aug, strong=True)).e
    expect = weak if source == "weak" else strong
    assert len(seen) == 1 and np.array_equal(seen[0], expect)


def test_a9_step_uses_overall_loss(small_ds):
    cfg = tcfg(variant="A9")
    state = init_state(small_ds, cfg)
    state.env = envsplit.refresh(small_ds, state.params, 0, cfg.env)
    idx = pk_sample(small_ds.y, cfg.P, cfg.K, state.sampler_rng)
    bank0 = state.bank.copy()
    params0 = state.params.copy()
    g = np.random.default_rng()
    g.bit_generator.state = state.augment_rng.bit_generator.state
    rec = train_step(state, idx, small_ds, cfg)

    weak = forward(params0, augment_batch(small_ds.X[idx], g, cfg.aug)).e
    strong = forward(params0, augment_batch(small_ds.X[idx], g, cfg.aug, strong=True)).e
    y, c = small_ds.y[idx], small_ds.c[idx]
    u = state.env.sample_envs(y)
    value, _ = losses.loss_overall(BatchView(weak, y, c, u, strong), bank0, cfg.loss, state.env.members(),
                                   small_ds.camera_membership())
    assert rec["loss"] == pytest.approx(value, rel=1e-12)
    assert set(rec) >= {"intra1", "intra2", "inter1", "inter2"}


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(small_ds):
    cfg = tcfg()
    state = init_state(small_ds, cfg)
    state.params.W1[0, 0] = np.nan
    with pytest.raises(NumericalError):
        train_step(state, pk_sample(small_ds.y, cfg.P, cfg.K, state.sampler_rng), small_ds, cfg)


def test_training_is_bitwise_deterministic(small_ds):
    a = train(small_ds, tcfg())
    b = train(small_ds, tcfg())
    assert all(np.array_equal(x, y) for x, y in zip(a.params.arrays(), b.params.arrays()))
    assert np.array_equal(a.bank.M, b.bank.M)
    assert a.history == b.history


def test_epoch_records_and_steps(small_ds):
    cfg = tcfg(epochs=3)
    records = []
    state = train(small_ds, cfg, on_record=records.append)
    epochs = [r for r in records if r["type"] == "epoch"]
    steps = [r for r in records if r["type"] == "step"]
    assert [r["epoch"] for r in epochs] == [0, 1, 2]
    assert len(steps) == 3 * int(np.ceil(small_ds.N / cfg.batch_size))
    assert state.epoch == 3


def test_env_split_disabled_uses_cameras(small_ds):
    cfg = tcfg(env_split_enabled=False, variant="A2")
    state = train(small_ds, cfg)
    assert state.env.SC == small_ds.C


def test_sgd_optimizer_runs(small_ds):
    state = train(small_ds, tcfg(optimizer="sgd", lr=0.05))
    assert np.all(np.isfinite(state.params.W1))


def test_checkpoint_round_trip_resumes_identically(small_ds, tmp_path):
    cfg = tcfg(epochs=1)
    state = init_state(small_ds, cfg)
    run_epoch(state, small_ds, cfg)
    save_checkpoint(state, tmp_path / "ck.bin")
    resumed = load_checkpoint(tmp_path / "ck.bin", cfg)
    run_epoch(state, small_ds, cfg)
    run_epoch(resumed, small_ds, cfg)
    assert all(np.array_equal(a, b) for a, b in zip(state.params.arrays(), resumed.params.arrays()))
    assert np.array_equal(state.bank.M, resumed.bank.M)


def test_loss_decreases_on_default_benchmark():
    cfg = RunConfig(epochs=8)
    ds = make_sct_split(generate_synthetic(cfg.synth(0)), 0)
    for variant in ("A2", "A9"):
        rec = []
        train(ds, cfg.train(0, variant), on_record=rec.append)
        means = [r["mean_loss"] for r in rec if r["type"] == "epoch"]
        assert means[-1] < means[0], variant


# -- gradients through the encoder ---------------------------------------------

def _loss_through_encoder(name, b, Xw, Xs, cfg):
    """Loss value and parameter gradients for one selected term, encoder included."""
    def value(p):
        Fw = forward(p, Xw).e
        Fs = forward(p, Xs).e
        return _term(name, b, Fw, Fs, cfg)[0]

    def grads(p):
        cw, cs = forward(p, Xw), forward(p, Xs)
        _, gw, gs = _term(name, b, cw.e, cs.e, cfg)
        g = backward(p, cw, gw)
        h = backward(p, cs, gs)
        return EncoderParams(*(x + y for x, y in zip(g.arrays(), h.arrays())))
    return value, grads


def _term(name, b, Fw, Fs, cfg):
    zero = np.zeros_like(Fw)
    if name == "base":
        v, g = losses.loss_base(Fw, b.y, b.bank, cfg)
        return v, g, zero
    if name == "intra1":
        v, g = losses.loss_intra_env(Fw, b.y, b.u, b.env_members, b.bank, cfg)
        return v, g, zero
    if name == "intra2":
        v, g = losses.loss_intra_aug(Fs, b.y, b.u, b.env_members, b.bank, cfg)
        return v, zero, g
    if name == "mcnl":
        v, g = losses.loss_mcnl(Fw, b.y, b.c, cfg)
        return v, g, zero
    if name == "inter1":
        v, g = losses.loss_inter1(Fw, b.y, b.c, cfg)
        return v, g, zero
    if name == "inter2":
        v, g = losses.loss_inter2(Fw, b.y, b.c, b.bank, b.cam_members, cfg)
        return v, g, zero
    v, (gw, gs) = losses.loss_overall(BatchView(Fw, b.y, b.c, b.u, Fs), b.bank, cfg, b.env_members,
                                       b.cam_members)
    return v, gw, gs


@pytest.mark.parametrize("seed", range(3))
def test_parameter_gradients_of_every_loss(make_batch, seed):
    rng = np.random.default_rng(500 + seed)
    cfg = LossConfig(K1=3, K2=3)
    while True:
        b = make_batch(rng, n=10, Y=6, C=2, d=4, per_id=2)
        p = init_params(5, 6, 4, rng)
        Xw, Xs = rng.standard_normal((10, 5)), rng.standard_normal((10, 5))
        Fw = forward(p, Xw).e
        if kink_distance(Fw, b.y, b.c, b.bank.M, b.cam_members, cfg.m1, cfg.m2) > 1e-3:
            break
    for name in ("base", "intra1", "intra2", "mcnl", "inter1", "inter2", "overall"):
        value, grads = _loss_through_encoder(name, b, Xw, Xs, cfg)
        g = grads(p)
        for pname in EncoderParams.NAMES:
            def f(A, pname=pname):
                q = p.copy()
                setattr(q, pname, A)
                return value(q)
            assert rel_err(getattr(g, pname), fd_grad(f, getattr(p, pname))) < 1e-4, (name, pname)
