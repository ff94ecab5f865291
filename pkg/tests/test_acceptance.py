"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N: PASS|FAIL`` line (also repeated in the
session summary).  Criteria 6-8 train desk-scale models; 7 and 8 reuse the
checkpoints cached by :mod:`objaff.experiments` when present.
"""
import hashlib
import math
import time

import numpy as np
import pytest

from objaff import experiments, geometry, metrics, nn
from objaff.backbones import PlanBatch, PointNet2Encoder, build_plan, center
from objaff.config import DESK, TINY
from objaff.datagen import Dataset, DatasetManifest, TrialRecord
from objaff.model import VARIANTS, AffordanceModel, predict_heatmap
from objaff.sim import tasks
from objaff.sim.render import render_scan
from objaff.sim.scene import TASKS, GenerationError, build_scene, dumps
from objaff.sim.shapes import ITEM_FAMILIES, TRAIN_FAMILIES, ActingObjectSpec, random_item
from objaff.train import make_batch

from . import conftest
from .oracles import (
    brute_average_precision,
    brute_f_score,
    brute_fps,
    brute_idw,
    input_grad_error,
    param_grad_error,
    sampled_grad_error,
)


def _report(capsys, number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.ACCEPTANCE[number] = line
    with capsys.disabled():
        print("\n" + line)


# ------------------------------------------------------------------ 1
# Central differences with step EPS; differences are relative to
# max(|numeric|, |analytic|, FLOOR).  Entries whose true gradient is near zero
# (BatchNorm input gradients sum to zero per channel) carry finite-difference
# roundoff far above their size, so they are judged on an absolute scale.
EPS = 1e-5
FLOOR = 1e-5


def _per_op_errors():
    rng = np.random.default_rng(0)
    errs = {}
    x = rng.normal(size=(6, 4))

    def check_input(name, forward, backward, value):
        errs[name] = input_grad_error(forward, backward, value, eps=EPS, floor=FLOOR)

    lin = nn.Linear(4, 3, rng)
    errs["linear params"] = param_grad_error(lin, x, eps=EPS, floor=FLOOR)
    check_input("linear input", lin.forward, lin.backward, x.copy())
    for kind in nn.Activation.KINDS:
        act = nn.Activation(kind)
        check_input(kind, act.forward, act.backward, x.copy())
    for cls in (nn.BatchNorm, nn.BNReLU):
        for training in (True, False):
            bn = cls(4)
            bn.gamma.value[...] = rng.uniform(0.5, 1.5, 4)
            bn.beta.value[...] = rng.normal(size=4) * 0.1
            bn._buffers["running_mean"][...] = rng.normal(size=4) * 0.1
            bn._buffers["running_var"][...] = rng.uniform(0.5, 2.0, 4)
            bn.train(training)
            tag = f"{cls.__name__} {'train' if training else 'eval'}"
            errs[tag + " params"] = param_grad_error(bn, x, eps=EPS, floor=FLOOR)
            check_input(tag + " input", bn.forward, bn.backward, x.copy())

    pts = rng.normal(size=(7, 3))
    check_input("max pool", lambda v: nn.max_pool_points(v)[0],
                lambda g: nn.max_pool_points_backward(g, nn.max_pool_points(pts)[1], 7), pts)
    groups = rng.normal(size=(3, 5, 4))
    check_input("group max", lambda v: nn.group_max(v)[0],
                lambda g: nn.group_max_backward(g, nn.group_max(groups)[1], 5), groups)

    labels = np.array([1.0, 0.0, 1.0, 0.0])
    pred = np.array([0.8, 0.3, 0.4, 0.6])
    check_input("bce", lambda q: np.array([nn.bce_loss(q, labels)[0]]),
                lambda g: g[0] * nn.bce_loss(pred, labels)[1], pred)

    index = np.array([0, 2, 2, 1, 0])
    vals = rng.normal(size=(5, 3))
    check_input("segment sum", lambda v: nn.segment_sum(index, v, 4), lambda g: g[index], vals)

    # kernel query: scene features interpolated at translated object points
    model = AffordanceModel(TINY, "full", 0)
    prep = model.prepare(rng.uniform(-0.5, 0.5, (TINY.n, 3)), rng.normal(size=(TINY.m, 3)) * 0.1, [3, 40])
    batch = model.batch([prep])
    fs = rng.normal(size=(TINY.n, 4))
    check_input("kernel query", lambda f: batch.kernel @ f, lambda g: batch.kernel_T @ g, fs)

    mlp = nn.shared_mlp([4, 5, 3], rng)
    errs["shared mlp"] = param_grad_error(mlp, x, eps=EPS, floor=FLOOR)
    return errs


def _encoder_errors():
    """Set-abstraction and propagation stacks of the TINY encoders."""
    rng = np.random.default_rng(0)
    errs = {}
    model = AffordanceModel(TINY, "full", 0)
    errs["critic"] = param_grad_error(model.critic, rng.normal(size=(6, model.critic_in)), floor=FLOOR)
    for name, cfg, n in (("scene encoder", TINY.scene_encoder, 64), ("object encoder", TINY.object_encoder, 32)):
        enc = PointNet2Encoder(cfg, rng)
        plans = PlanBatch([build_plan(center(rng.normal(size=(n, 3)) * 0.3), cfg) for _ in range(2)])
        out, glob = enc.forward(plans)
        R = rng.normal(size=out.shape)
        Rg = None if glob is None else rng.normal(size=glob.shape)

        def loss(enc=enc, plans=plans, R=R, Rg=Rg):
            o, g = enc.forward(plans)
            return float(np.sum(R * o) + (0.0 if g is None else np.sum(Rg * g)))

        errs[name] = sampled_grad_error(loss, lambda enc=enc, R=R, Rg=Rg: enc.backward(R, Rg), enc.parameters(),
                                        eps=1e-5, floor=FLOOR, entries=6, rng=rng)
    return errs


def _desk_end_to_end_error():
    rng = np.random.default_rng(0)
    model = AffordanceModel(DESK, "full", 0)
    items = [
        model.prepare(rng.uniform(-0.5, 0.5, (DESK.n, 3)), rng.normal(size=(DESK.m, 3)) * 0.08, [5 + i, 900 + i])
        for i in range(2)
    ]
    batch = model.batch(items)
    weights = rng.normal(size=batch.Q)
    # a tiny step keeps the difference quotient clear of ReLU and max-pool kinks;
    # gradients below the floor are compared on an absolute scale
    return sampled_grad_error(lambda: float(np.sum(weights * model.forward(batch))), lambda: model.backward(weights),
                              model.parameters(), eps=1e-7, floor=1e-3, entries=2, rng=np.random.default_rng(1))


def test_criterion_01_gradient_integrity(capsys):
    start = time.perf_counter()
    per_op = _per_op_errors()
    composite = _encoder_errors()
    composite["desk model"] = _desk_end_to_end_error()
    seconds = time.perf_counter() - start
    worst_op = max(per_op, key=per_op.get)
    worst_mod = max(composite, key=composite.get)
    ok = per_op[worst_op] < 1e-4 and composite[worst_mod] < 1e-3 and seconds < 120
    _report(capsys, 1, ok, f"worst per-op {per_op[worst_op]:.1e} ({worst_op}), worst end-to-end "
                           f"{composite[worst_mod]:.1e} ({worst_mod}), {seconds:.0f} s")
    assert ok, (per_op, composite)


# ------------------------------------------------------------------ 2
def test_criterion_02_idw_oracle(capsys):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(3, 200))
        cloud = geometry.PointCloud(rng.normal(size=(n, 3)), features=rng.normal(size=(n, 4)))
        q = rng.normal(size=(100, 3))
        q[:5] = cloud.points[:5]  # queries that coincide with cloud points
        got = geometry.idw_interpolate_batch(q, cloud, 3)
        for row, x in enumerate(q):
            worst = max(worst, float(np.max(np.abs(got[row] - brute_idw(x, cloud.points, cloud.features, 3)))))
    hand = geometry.idw_interpolate((0, 0, 0), geometry.PointCloud([[1, 0, 0], [0, 2, 0], [0, 0, 4]],
                                                                     features=[1.0, 2.0, 4.0]), 3)[0]
    ok = worst <= 1e-9 and abs(hand - 12 / 7) <= 1e-12
    _report(capsys, 2, ok, f"1000 queries max |diff| {worst:.1e}; hand case {hand:.15f} vs 12/7")
    assert ok


# ------------------------------------------------------------------ 3
def test_criterion_03_fps_oracle(capsys):
    rng = np.random.default_rng(3)
    mismatches = 0
    for i in range(100):
        n = int(rng.integers(1, 201))
        if i % 2:
            pts = rng.integers(0, 4, size=(n, 3)).astype(float)  # lattice clouds full of ties
        else:
            pts = rng.normal(size=(n, 3))
        k = int(rng.integers(1, n + 1))
        start = int(rng.integers(n))
        mismatches += not np.array_equal(geometry.furthest_point_sample(pts, k, start), brute_fps(pts, k, start))
    ok = mismatches == 0
    _report(capsys, 3, ok, f"{100 - mismatches}/100 clouds give identical indices")
    assert ok


# ------------------------------------------------------------------ 4
def test_criterion_04_metric_oracles(capsys):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 101))
        scores = np.round(rng.uniform(size=n), 1)
        labels = rng.uniform(size=n) < 0.4
        worst = max(worst, abs(metrics.f_score(scores, labels) - brute_f_score(scores, labels)))
        worst = max(worst, abs(metrics.average_precision(scores, labels) - brute_average_precision(list(scores), list(labels))))
    hands = [
        metrics.f_score([0.9, 0.9, 0.1, 0.4], [1, 0, 0, 1]) == pytest.approx(50.0, abs=1e-12),
        metrics.f_score([0.9, 0.1], [1, 0]) == 100.0,
        metrics.f_score([0.1, 0.2], [1, 1]) == 0.0,
        metrics.average_precision([0.4, 0.6], [1, 0]) == pytest.approx(50.0, abs=1e-12),
        metrics.average_precision([0.9, 0.1], [1, 0]) == pytest.approx(100.0, abs=1e-12),
    ]
    ok = worst <= 1e-9 and all(hands)
    _report(capsys, 4, ok, f"20 sets max |diff| {worst:.1e}; {sum(hands)}/{len(hands)} hand cases")
    assert ok


# ------------------------------------------------------------------ 5
def _pair_digest(task, seed):
    h = hashlib.sha256()
    try:
        scene = build_scene(task, seed, TINY.camera_resolution)
    except GenerationError as exc:
        h.update(str(exc).encode())
        return h.hexdigest()
    h.update(dumps(scene).encode())
    scan = render_scan(scene, TINY.n)
    h.update(scan.points.tobytes() + scan.normals.tobytes())
    app, pos = tasks.applicable_possible_mask(scan, task)
    h.update(app.tobytes() + pos.tobytes())
    rng = np.random.default_rng([seed, 99])
    pool = np.nonzero(pos)[0]
    if len(pool):
        obj = random_item(TRAIN_FAMILIES[seed % 4], rng)
        outcome = tasks.run_trial(task, scene, scan, obj, int(rng.choice(pool)), (app, pos))
        h.update(repr(sorted(outcome.to_dict().items())).encode())
    return h.hexdigest()


def test_criterion_05_simulator_determinism_and_offsets(capsys):
    pairs = [(task, seed) for task in TASKS for seed in range(250)]
    first = [_pair_digest(t, s) for t, s in pairs]
    second = [_pair_digest(t, s) for t, s in pairs]
    same = sum(a == b for a, b in zip(first, second))
    rng = np.random.default_rng(5)
    offsets_ok = 0
    for _ in range(1000):
        sx, sy, sz = rng.uniform(0.01, 1.0, size=3)
        size = (sx, sy, sz)
        offsets_ok += (
            tasks.compute_offset("placement", size).tolist() == [0.0, 0.0, sz / 2 + 0.01]
            and tasks.compute_offset("fitting", size).tolist() == [0.0, 0.0, sz / 2 + 0.01]
            and tasks.compute_offset("pushing", size).tolist() == [-sx / 2 - 0.1, 0.0, sz / 2 + 0.02]
            and tasks.compute_offset("stacking", size).tolist() == [0.0, 0.0, sz / 2]
        )
    ok = same == len(pairs) and offsets_ok == 1000
    _report(capsys, 5, ok, f"{same}/{len(pairs)} (seed, task) pairs identical on rerun; offsets exact on {offsets_ok}/1000 sizes")
    assert ok


# ------------------------------------------------------------------ 6
@pytest.mark.slow
def test_criterion_06_overfit_placement(capsys):
    res = experiments.overfit_placement(n_trials=200, max_steps=5000, seed=0)
    ok = res["trials"] == 200 and res["f_score"] >= 95.0 and res["steps"] <= 5000 and res["seconds"] < 1800
    _report(capsys, 6, ok, f"training F {res['f_score']:.1f} on {res['trials']} trials after {res['steps']} steps, "
                           f"{res['seconds'] / 60:.1f} min")
    assert ok


# ------------------------------------------------------------------ 7
@pytest.mark.slow
def test_criterion_07_ablation_ordering(capsys):
    train_set, test_set = experiments.fitting_data()
    rows = experiments.ablation(seeds=(0, 1, 2))
    wins = sum(r["full"]["ap"] >= r["ablated"]["ap"] for r in rows)
    ok = train_set.manifest.positive_count >= 500 and wins >= 2
    detail = ", ".join(f"seed {r['seed']}: {r['full']['ap']:.1f} vs {r['ablated']['ap']:.1f}" for r in rows)
    _report(capsys, 7, ok, f"full AP >= ablated AP on {wins}/3 seeds ({detail}); "
                           f"{train_set.manifest.positive_count} train positives")
    assert ok


# ------------------------------------------------------------------ 8
@pytest.mark.slow
def test_criterion_08_size_sensitivity(capsys):
    model = experiments.trained_fitting_model("full", 0)
    rows = experiments.size_sensitivity(model, scenes=10, factor=2.0)
    drops = sum(r["scaled"] < r["base"] for r in rows)
    ok = drops >= 8
    mean_base = np.mean([r["base"] for r in rows])
    mean_big = np.mean([r["scaled"] for r in rows])
    _report(capsys, 8, ok, f"2x object lowers cavity affordance on {drops}/10 scenes "
                           f"(mean {mean_base:.3f} -> {mean_big:.3f})")
    assert ok


# ------------------------------------------------------------------ 9
def test_criterion_09_balanced_batches(capsys):
    rng = np.random.default_rng(9)
    labels = rng.uniform(size=300) < 0.15
    obj = ActingObjectSpec("box", 0)
    records = [TrialRecord("placement", i, i, obj, 0, (0.0, 0.0, 0.0), int(y), "ok" if y else "unstable", "box")
               for i, y in enumerate(labels)]
    ds = Dataset(DatasetManifest("placement", "desk", 0, ["box"], int(labels.sum()), 1), records)
    exact = 0
    for _ in range(10_000):
        idx = make_batch(ds, rng, 32)
        exact += len(idx) == 32 and int(ds.labels[idx].sum()) == 16
    ok = exact == 10_000
    _report(capsys, 9, ok, f"{exact}/10000 batches hold exactly 16 positives of 32 (dataset rate {labels.mean():.2f})")
    assert ok


# ------------------------------------------------------------------ 10
def test_criterion_10_heatmap_contract(capsys):
    rng = np.random.default_rng(10)
    failures = []
    for i in range(100):
        task = TASKS[i % 4]
        try:
            scene = build_scene(task, 10_000 + i, TINY.camera_resolution)
        except GenerationError:
            scene = build_scene(task, 20_000 + i, TINY.camera_resolution)
        scan = render_scan(scene, TINY.n)
        obj = random_item(ITEM_FAMILIES[i % len(ITEM_FAMILIES)], rng)
        cloud = obj.cloud(TINY.m, seed=i)
        model = AffordanceModel(TINY, VARIANTS[i % len(VARIANTS)], int(rng.integers(1 << 30)))
        k = int(rng.integers(1, TINY.n + 1))
        heat = predict_heatmap(model, scan.points, cloud, scan.normals, k=k)
        model.eval()
        base = model.prepare_clouds(scan.points, cloud, scan.normals)
        direct = model.predict_seeds([model.with_seeds(base, heat.seeds)])
        seeds = set(heat.seeds.tolist())
        others = np.array([j for j in range(TINY.n) if j not in seeds], dtype=int)
        in_range = bool(np.all((heat.values >= 0.0) & (heat.values <= 1.0)))
        at_seeds = np.array_equal(heat.values[heat.seeds], direct) and np.array_equal(heat.seed_values, direct)
        lo, hi = direct.min(), direct.max()
        envelope = len(others) == 0 or bool(np.all((heat.values[others] >= lo - 1e-12) & (heat.values[others] <= hi + 1e-12)))
        if not (in_range and at_seeds and envelope):
            failures.append((i, in_range, at_seeds, envelope))
    ok = not failures
    _report(capsys, 10, ok, f"{100 - len(failures)}/100 (scene, object, model) triples meet the heatmap contract")
    assert ok, failures
