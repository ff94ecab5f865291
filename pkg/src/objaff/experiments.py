"""Training experiments behind the overfit, ablation and size-sensitivity checks.

Trained checkpoints and datasets are cached on disk under a key that includes
a fingerprint of the source files they depend on, so changing those files
regenerates the data or retrains the model.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from pathlib import Path

import numpy as np

from . import datagen
from .config import DESK, Preset
from .model import AffordanceModel, load_model, predict_heatmap, save_model
from .sim.shapes import TEST_FAMILIES, TRAIN_FAMILIES, random_item
from .train import PreparedCache, TrainConfig, evaluate, train

log = logging.getLogger(__name__)

FIT_TRAIN_SEED = 101
FIT_TEST_SEED = 202
FIT_SCENE_SEED = 303
ABLATION_STEPS = 1500
SIZE_FACTOR = 2.0


def cache_root() -> Path:
    return Path(os.environ.get("OBJAFF_CACHE", Path.home() / ".cache" / "objaff"))


# sources whose behaviour can change a dataset or a trained model
DATA_SOURCES = ("sim", "datagen.py", "geometry.py", "config.py", "backbones.py")
MODEL_SOURCES = DATA_SOURCES + ("nn.py", "_kernels.py", "model.py", "train.py")


def code_fingerprint(data_only: bool = False) -> str:
    root = Path(__file__).parent
    sources = DATA_SOURCES if data_only else MODEL_SOURCES
    h = hashlib.sha256()
    for path in sorted(root.rglob("*.py")):
        rel = path.relative_to(root).as_posix()
        if not any(rel == s or rel.startswith(s + "/") for s in sources):
            continue
        h.update(rel.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def _key(data_only: bool = False, **parts) -> str:
    text = json.dumps({"code": code_fingerprint(data_only), **parts}, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:20]


def cached_dataset(name: str, task: str, target: int, seed: int, preset: Preset, families) -> datagen.Dataset:
    path = cache_root() / f"{name}-{_key(True, task=task, target=target, seed=seed, preset=preset.to_dict(), families=list(families))}"
    if (path / "manifest.json").exists():
        return datagen.load_dataset(path)
    ds = datagen.collect_dataset(task, target, seed, preset, families)
    datagen.save_dataset(path, ds)
    return ds


# ------------------------------------------------------------------ overfit
def overfit_placement(n_trials: int = 200, max_steps: int = 5000, seed: int = 0, eval_interval: int = 50,
                      target_f_score: float = 95.0, preset: Preset = DESK) -> dict:
    """Train the full model on ``n_trials`` placement trials until the training F-score reaches the target."""
    target = max(n_trials // 4, 1)
    full = datagen.collect_dataset("placement", target, seed, preset)
    while len(full) < n_trials:  # too few negatives kept; ask for more positives
        target *= 2
        full = datagen.collect_dataset("placement", target, seed, preset)
    ds = full.subset(range(n_trials))
    model = AffordanceModel(preset, "full", seed)
    config = TrainConfig(batch_size=preset.batch_size, max_steps=max_steps, eval_interval=eval_interval,
                         seed=seed, target_f_score=target_f_score)
    start = time.perf_counter()
    result = train(model, ds, config)
    final = evaluate(model, ds)
    return {
        "trials": len(ds),
        "positives": int(ds.labels.sum()),
        "steps": result.steps,
        "f_score": final.f_score,
        "seconds": time.perf_counter() - start,
        "evals": result.evals,
    }


# ------------------------------------------------------------------ fitting models
def fitting_data(preset: Preset = DESK, train_target: int = 500, test_target: int = 150):
    """Train split on the training families and test split on the held-out families."""
    tr = cached_dataset("fit-train", "fitting", train_target, FIT_TRAIN_SEED, preset, TRAIN_FAMILIES)
    te = cached_dataset("fit-test", "fitting", test_target, FIT_TEST_SEED, preset, TEST_FAMILIES)
    return tr, te


def trained_fitting_model(variant: str, seed: int, steps: int = ABLATION_STEPS, preset: Preset = DESK,
                          dataset: datagen.Dataset | None = None) -> AffordanceModel:
    """Fitting critic of ``variant`` trained from ``seed`` (loaded from the cache when present)."""
    dataset = dataset if dataset is not None else fitting_data(preset)[0]
    key = _key(variant=variant, seed=seed, steps=steps, preset=preset.to_dict(), data=dataset.manifest.to_json())
    path = cache_root() / f"fit-{variant}-s{seed}-{key}.npz"
    if path.exists():
        return load_model(path)
    model = AffordanceModel(preset, variant, seed)
    config = TrainConfig(batch_size=preset.batch_size, max_steps=steps, eval_interval=steps, seed=seed, variant=variant)
    result = train(model, dataset, config)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(path, model, {"steps": result.steps, "final_loss": result.losses[-1] if result.losses else None})
    return load_model(path)


def ablation(seeds=(0, 1, 2), steps: int = ABLATION_STEPS, preset: Preset = DESK) -> list[dict]:
    """Test AP of the full and the kernel-ablated fitting critic for each seed."""
    tr, te = fitting_data(preset)
    rows = []
    for s in seeds:
        row = {"seed": s}
        for variant in ("full", "ablated"):
            model = trained_fitting_model(variant, s, steps, preset, tr)
            report = evaluate(model, te)
            row[variant] = {"ap": report.ap, "f_score": report.f_score}
        rows.append(row)
        log.info("ablation seed %d: full AP %.2f, ablated AP %.2f", s, row["full"]["ap"], row["ablated"]["ap"])
    return rows


# ------------------------------------------------------------------ size sensitivity
def cavity_affordance(model: AffordanceModel, scan, obj) -> float:
    """Mean heatmap value over scan points on an inside-part support surface."""
    cavity = scan.roles == "cavity"
    heat = predict_heatmap(model, scan.points, datagen.object_cloud(obj, model.preset.m), scan.normals)
    return float(heat.values[cavity].mean())


def size_sensitivity(model: AffordanceModel, scenes: int = 10, factor: float = SIZE_FACTOR) -> list[dict]:
    """Cavity affordance for an object and for the same object scaled by ``factor`` on held-out scenes."""
    preset = model.preset
    rows = []
    i = 0
    while len(rows) < scenes:
        seed = FIT_SCENE_SEED * 1_000_000 + i
        i += 1
        try:
            _, scan, _ = datagen.scene_and_scan("fitting", seed, preset.n, preset.camera_resolution)
        except datagen.GenerationError:
            continue
        rng = np.random.default_rng([seed, 5])
        obj = random_item(TRAIN_FAMILIES[len(rows) % len(TRAIN_FAMILIES)], rng)
        base = cavity_affordance(model, scan, obj)
        big = cavity_affordance(model, scan, obj.scaled_by(factor))
        rows.append({"scene_seed": seed, "object": obj.to_dict(), "base": base, "scaled": big})
    return rows


__all__ = [
    "ablation",
    "cache_root",
    "cached_dataset",
    "cavity_affordance",
    "fitting_data",
    "overfit_placement",
    "size_sensitivity",
    "trained_fitting_model",
    "TEST_FAMILIES",
]
