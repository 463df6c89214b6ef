import json

import numpy as np
import pytest
from scipy.stats import special_ortho_group

import brute
from conftest import unit_rows
from iici.encoder import init_params
from iici.dataset import Dataset
from iici.evaluation import camera_probe, evaluate, extract, mcnl_order_rate, save_result


def line(xs):
    return np.array([[x, 0.0] for x in xs])


def test_worked_ap_example():
    # query at 0, gallery ranked pos, neg, pos
    res = evaluate(line([0]), [0], [0], line([1, 2, 3]), [0, 1, 0], [1, 1, 1])
    assert res.mAP == pytest.approx(5 / 6, abs=1e-15)
    assert res.cmc[1] == 1.0


def test_perfect_ranking():
    res = evaluate(line([0]), [0], [0], line([1, 2, 3, 4]), [0, 0, 1, 1], [1, 2, 1, 2])
    assert res.mAP == 1.0 and res.cmc == {1: 1.0, 5: 1.0, 10: 1.0}


def test_same_camera_match_is_excluded_and_query_dropped():
    res = evaluate(line([0, 0]), [0, 1], [0, 0], line([1, 2]), [0, 1], [0, 1])
    # query 0's only match shares its camera; query 1's match sits behind an id-0 item
    assert res.num_dropped_queries == 1 and res.num_valid_queries == 1
    assert res.mAP == pytest.approx(0.5)


def test_excluded_items_do_not_count_as_negatives():
    res = evaluate(line([0]), [0], [0], line([1, 2, 3]), [0, 1, 0], [0, 1, 1])
    assert res.mAP == pytest.approx(0.5)
    assert res.cmc[1] == 0.0 and res.cmc[5] == 1.0


def test_ties_follow_gallery_order():
    res = evaluate(line([0]), [0], [0], line([1, 1]), [1, 0], [1, 1])
    assert res.cmc[1] == 0.0
    res = evaluate(line([0]), [0], [0], line([1, 1]), [0, 1], [1, 1])
    assert res.cmc[1] == 1.0


def test_empty_inputs_rejected():
    with pytest.raises(ValueError):
        evaluate(np.zeros((0, 2)), [], [], line([1]), [0], [0])


def _random_instance(rng):
    nq, ng = rng.integers(1, 15), rng.integers(1, 60)
    Y, C, d = rng.integers(2, 8), rng.integers(1, 4), rng.integers(2, 6)
    return (unit_rows(rng.standard_normal((nq, d))), rng.integers(0, Y, nq), rng.integers(0, C, nq),
            unit_rows(rng.standard_normal((ng, d))), rng.integers(0, Y, ng), rng.integers(0, C, ng))


@pytest.mark.parametrize("seed", range(50))
def test_matches_brute_force_exactly(seed):
    inst = _random_instance(np.random.default_rng(seed))
    res = evaluate(*inst)
    qf, ql, qc, gf, gl, gc = inst
    ref = brute.retrieval(qf.tolist(), ql.tolist(), qc.tolist(), gf.tolist(), gl.tolist(), gc.tolist())
    assert res.num_dropped_queries == ref["dropped"]
    assert res.ap.tolist() == ref["ap"]
    assert res.mAP == ref["mAP"]
    assert {k: float(v) for k, v in res.cmc.items()} == ref["cmc"]


def test_metric_invariants(rng):
    qf, ql, qc, gf, gl, gc = _random_instance(rng)
    res = evaluate(qf, ql, qc, gf, gl, gc)
    assert 0 <= res.mAP <= 1
    assert res.cmc[1] <= res.cmc[5] <= res.cmc[10] <= 1
    perm = rng.permutation(len(gl))
    shuffled = evaluate(qf, ql, qc, gf[perm], gl[perm], gc[perm])
    assert shuffled.mAP == pytest.approx(res.mAP, abs=1e-15) and shuffled.cmc == res.cmc
    R = special_ortho_group.rvs(qf.shape[1], random_state=1)
    rotated = evaluate(qf @ R, ql, qc, gf @ R, gl, gc)
    assert rotated.mAP == pytest.approx(res.mAP, abs=1e-15) and rotated.cmc == res.cmc


def test_extract_unit_norm_and_order(rng):
    p = init_params(5, 8, 4, rng)
    ds = Dataset(rng.standard_normal((6, 5)), np.arange(6), np.zeros(6, int), 6, 1)
    E = extract(ds, p)
    assert np.allclose(np.linalg.norm(E, axis=1), 1)
    assert np.allclose(extract(ds.subset([3, 1]), p), E[[3, 1]], rtol=0, atol=1e-15)
    assert np.array_equal(E, extract(ds, p))


@pytest.mark.parametrize("method", ["logistic", "ncm"])
def test_probe_on_camera_coded_embeddings(method, rng):
    cams = np.repeat(np.arange(4), 30)
    E = np.eye(4)[cams] + 0.01 * rng.standard_normal((120, 4))
    res = camera_probe(E, cams, seed=0, method=method)
    assert res.accuracy == pytest.approx(1.0) and res.chance == 0.25


def test_probe_near_chance_on_shuffled_cameras():
    rng = np.random.default_rng(0)
    E = rng.standard_normal((2000, 8))
    cams = rng.integers(0, 4, 2000)
    acc = camera_probe(E, cams, seed=0).accuracy
    assert abs(acc - 0.25) < 0.05


def test_probe_single_camera_is_degenerate():
    res = camera_probe(np.ones((5, 3)), np.zeros(5, int))
    assert res.accuracy == 1.0 and res.degenerate


def test_probe_rejects_unknown_method(rng):
    with pytest.raises(ValueError):
        camera_probe(rng.standard_normal((10, 2)), np.arange(10) % 2, method="svm")


def test_order_rate_on_ordered_embeddings():
    # two cameras; each camera has two ids. Positives tight, cross negatives next, intra negatives far.
    E = np.array([[0, 0], [0.1, 0], [5, 0], [5.1, 0], [0, 1], [0.1, 1], [5, 1], [5.1, 1]], float)
    y = np.array([0, 0, 1, 1, 2, 2, 3, 3])
    c = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    assert mcnl_order_rate(E, y, c, lambda: np.arange(8), trials=3) == 1.0


def test_order_rate_without_valid_anchor():
    E = np.eye(3)
    with pytest.raises(ValueError):
        mcnl_order_rate(E, [0, 1, 2], [0, 1, 2], lambda: np.arange(3), trials=2)


def test_order_rate_on_random_embeddings_is_a_fraction(rng):
    E = unit_rows(rng.standard_normal((64, 4)))
    y = np.repeat(np.arange(16), 4)
    c = np.arange(16).repeat(4) % 4
    rate = mcnl_order_rate(E, y, c, lambda: rng.permutation(64)[:32], trials=5)
    assert 0.0 <= rate <= 1.0


def test_save_result_writes_json_and_csv(tmp_path):
    res = evaluate(line([0]), [0], [0], line([1, 2, 3]), [0, 1, 0], [1, 1, 1])
    save_result(res, tmp_path / "r.json", tmp_path / "r.csv", run_id="x", variant="A9", seed=0,
                probe_acc=0.5, order_rate=0.7)
    save_result(res, None, tmp_path / "r.csv", run_id="y", variant="A1", seed=1)
    assert json.loads((tmp_path / "r.json").read_text())["mAP"] == pytest.approx(5 / 6)
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "run_id,variant,seed,mAP,R1,R5,R10,probe_acc,order_rate"
    assert len(rows) == 3
