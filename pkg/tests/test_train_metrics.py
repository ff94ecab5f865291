import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from objaff import datagen, metrics, nn
from objaff.config import TINY
from objaff.model import AffordanceModel, load_model
from objaff.train import (
    DivergenceError,
    PreparedCache,
    TrainConfig,
    _trend_warning,
    evaluate,
    make_batch,
    predict_records,
    record_inputs,
    train,
)

from .conftest import toy_dataset
from .oracles import brute_average_precision, brute_f_score


# ------------------------------------------------------------------ F-score
def test_f_score_hand_case():
    assert metrics.f_score([0.9, 0.9, 0.1, 0.4], [1, 0, 0, 1]) == pytest.approx(50.0, abs=1e-12)


def test_f_score_perfect():
    assert metrics.f_score([0.9, 0.2, 0.7], [1, 0, 1]) == 100.0


def test_f_score_nothing_predicted_is_flagged_zero():
    score, degenerate = metrics.f_score_details([0.1, 0.2, 0.3], [1, 0, 1])
    assert score == 0.0 and degenerate
    score, degenerate = metrics.f_score_details([0.9, 0.2], [0, 0])
    assert score == 0.0 and degenerate
    score, degenerate = metrics.f_score_details([0.9, 0.2], [0, 1])
    assert score == 0.0 and not degenerate


def test_threshold_is_strict():
    assert metrics.confusion([0.5], [1]).fn == 1


def test_confusion_shape_mismatch():
    with pytest.raises(ValueError):
        metrics.confusion([0.1, 0.2], [1])


# ------------------------------------------------------------------ AP
def test_ap_hand_case():
    assert metrics.average_precision([0.4, 0.6], [1, 0]) == pytest.approx(50.0, abs=1e-12)


def test_ap_perfect_separation():
    assert metrics.average_precision([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == pytest.approx(100.0, abs=1e-12)


def test_ap_ties_are_grouped():
    # one tie group holding everything: precision is the positive rate
    assert metrics.average_precision([0.5] * 4, [1, 0, 0, 0]) == pytest.approx(25.0, abs=1e-12)


def test_ap_without_positives_is_zero():
    assert metrics.average_precision([0.3, 0.2], [0, 0]) == 0.0
    assert metrics.average_precision([], []) == 0.0


def test_ap_random_scores_near_positive_rate():
    rng = np.random.default_rng(0)
    labels = rng.uniform(size=10_000) < 0.3
    ap = metrics.average_precision(rng.uniform(size=10_000), labels)
    assert abs(ap - 100 * labels.mean()) <= 2.0


def test_metrics_match_oracles_on_random_sets():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(1, 101))
        scores = np.round(rng.uniform(size=n), 2)  # rounding creates ties
        labels = rng.uniform(size=n) < rng.uniform(0.1, 0.9)
        assert abs(metrics.f_score(scores, labels) - brute_f_score(scores, labels)) <= 1e-9
        assert abs(metrics.average_precision(scores, labels) - brute_average_precision(list(scores), list(labels))) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20).map(lambda v: v / 20), st.booleans()), min_size=1, max_size=60))
def test_metrics_oracle_property(pairs):
    scores = [s for s, _ in pairs]
    labels = [y for _, y in pairs]
    f = metrics.f_score(scores, labels)
    ap = metrics.average_precision(scores, labels)
    assert 0.0 <= f <= 100.0 and 0.0 <= ap <= 100.0 + 1e-9
    assert abs(f - brute_f_score(scores, labels)) <= 1e-9
    assert abs(ap - brute_average_precision(scores, labels)) <= 1e-9


# ------------------------------------------------------------------ batches
@pytest.fixture(scope="module")
def toy():
    model = AffordanceModel(TINY, "full", 0)
    return toy_dataset(model)[0]


def test_batch_is_half_positive(toy):
    rng = np.random.default_rng(2)
    for _ in range(50):
        idx = make_batch(toy, rng, 32)
        assert len(idx) == 32
        assert toy.labels[idx].sum() == 16


def test_single_positive_repeats(toy):
    one = toy.subset([int(toy.positives[0])] + list(toy.negatives))
    idx = make_batch(one, np.random.default_rng(3), 8)
    assert list(one.labels[idx]) == [1] * 4 + [0] * 4
    assert len(set(idx[:4].tolist())) == 1


def test_same_rng_state_same_batch(toy):
    a = make_batch(toy, np.random.default_rng(4), 16)
    b = make_batch(toy, np.random.default_rng(4), 16)
    assert np.array_equal(a, b)


def test_batch_errors(toy):
    with pytest.raises(ValueError):
        make_batch(toy, np.random.default_rng(0), 7)
    with pytest.raises(ValueError):
        make_batch(toy.subset(toy.negatives), np.random.default_rng(0), 8)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=31)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    assert TrainConfig().batch_size == 32 and TrainConfig().learning_rate == 1e-3


# ------------------------------------------------------------------ training
def _toy_run(steps, lr=1e-3, seed=0, out_dir=None):
    model = AffordanceModel(TINY, "full", 0)
    ds, cache = toy_dataset(model)
    cfg = TrainConfig(batch_size=8, learning_rate=lr, max_steps=steps, eval_interval=max(steps // 2, 1), seed=seed)
    result = train(model, ds, cfg, out_dir=out_dir, cache=cache)
    return model, ds, cache, result


def test_zero_learning_rate_leaves_parameters(toy):
    model = AffordanceModel(TINY, "full", 0)
    before = [p.value.copy() for p in model.parameters()]
    ds, cache = toy_dataset(model)
    train(model, ds, TrainConfig(batch_size=8, learning_rate=0.0, max_steps=5, eval_interval=100), cache=cache)
    assert all(np.array_equal(a, p.value) for a, p in zip(before, model.parameters()))


def test_fixed_seed_gives_identical_loss_curve():
    a = _toy_run(30)[3]
    b = _toy_run(30)[3]
    assert a.losses == b.losses
    c = _toy_run(30, seed=1)[3]
    assert c.losses != a.losses


def test_separable_toy_set_is_learned():
    model, ds, cache, result = _toy_run(400)
    loss, _ = nn.bce_loss(predict_records(model, ds, cache), ds.labels)
    assert loss < 0.1
    assert evaluate(model, ds, cache=cache).f_score == 100.0


def test_training_writes_checkpoint_and_curve(tmp_path):
    model, ds, cache, result = _toy_run(10, out_dir=tmp_path)
    curve = json.loads((tmp_path / "loss_curve.json").read_text())
    assert curve["losses"] == result.losses and curve["steps"] == 10
    assert [e["step"] for e in curve["evals"]] == [5, 10]
    back = load_model(tmp_path / "checkpoint.npz")
    assert back.variant == "full"


def test_divergence_aborts():
    model = AffordanceModel(TINY, "full", 0)
    ds, cache = toy_dataset(model)
    model.critic.layers[0].weight.value[0, 0] = np.nan
    with pytest.raises(DivergenceError) as info:
        train(model, ds, TrainConfig(batch_size=8, max_steps=3), cache=cache)
    assert info.value.step == 1


def test_variant_mismatch_rejected():
    model = AffordanceModel(TINY, "full", 0)
    ds, cache = toy_dataset(model)
    with pytest.raises(ValueError):
        train(model, ds, TrainConfig(batch_size=8, max_steps=1, variant="ablated"), cache=cache)


def test_trend_warning():
    assert not _trend_warning(list(np.linspace(1.0, 0.1, 300)))
    assert _trend_warning(list(np.linspace(0.1, 1.0, 300)))
    assert not _trend_warning([1.0] * 50)


# ------------------------------------------------------------------ evaluation
def test_evaluate_is_pure_and_consistent():
    model = AffordanceModel(TINY, "full", 3)
    ds, cache = toy_dataset(model)
    a = evaluate(model, ds, cache=cache)
    b = evaluate(model, ds, cache=cache)
    assert a.to_json() == b.to_json()
    assert a.tp + a.fp + a.fn + a.tn == a.count == len(ds)
    assert 0.0 <= a.f_score <= 100.0 and 0.0 <= a.ap <= 100.0
    assert sum(v["count"] for v in a.per_family.values()) == len(ds)
    pred = predict_records(model, ds, cache)
    assert a.f_score == metrics.f_score(pred, ds.labels)


def test_records_of_one_scan_share_the_scene_plan():
    ds = datagen.collect_dataset("placement", 4, 0, TINY)
    model = AffordanceModel(TINY, "full", 1)
    cache = PreparedCache(model, ds)
    by_scan = {}
    for i, rec in enumerate(ds.records):
        by_scan.setdefault((rec.scene_seed, rec.camera_seed), []).append(i)
    shared = [idx for idx in by_scan.values() if len(idx) > 1]
    assert shared
    for idx in shared:
        assert all(cache[i].scene_plan is cache[idx[0]].scene_plan for i in idx)
    fresh = []
    for rec in ds.records:
        scan, obj = record_inputs(rec, TINY)
        fresh.append(model.prepare(scan.points, obj, [rec.p_index], scan.normals))
    model.eval()
    assert np.array_equal(predict_records(model, ds, cache), model.forward(model.batch(fresh)))
