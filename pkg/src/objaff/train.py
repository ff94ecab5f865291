"""Balanced-batch training of the affordance critic and its evaluation."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .datagen import Dataset, record_inputs
from .model import AffordanceModel, Prepared, save_model
from .nn import Adam, bce_loss

log = logging.getLogger(__name__)

DIVERGENCE_LOSS = 100.0
TREND_WINDOW = 100


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float, detail: str):
        super().__init__(f"training diverged at step {step}: loss {loss!r} ({detail})")
        self.step, self.loss, self.detail = step, loss, detail


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    decay_factor: float = 0.9
    decay_every: int = 5000
    max_steps: int = 20_000
    eval_interval: int = 1000
    seed: int = 0
    variant: str = "full"
    target_f_score: float | None = None  # stop early once the training F-score reaches this

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch size must be a positive even number")
        if self.max_steps < 0 or self.eval_interval < 1:
            raise ValueError("max_steps must be >= 0 and eval_interval >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def make_batch(dataset: Dataset, rng: np.random.Generator, batch_size: int = 32) -> np.ndarray:
    """Record indices, first half positives and second half negatives, drawn with replacement."""
    if batch_size % 2:
        raise ValueError("batch size must be even")
    pos, neg = dataset.positives, dataset.negatives
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("a balanced batch needs at least one positive and one negative record")
    half = batch_size // 2
    return np.concatenate([pos[rng.integers(len(pos), size=half)], neg[rng.integers(len(neg), size=half)]])


class PreparedCache:
    """Model inputs for dataset records, built once on first use.

    Records taken from the same scan share one scene plan, which dominates the
    memory of a prepared item.
    """

    def __init__(self, model: AffordanceModel, dataset: Dataset):
        self.model, self.dataset = model, dataset
        self._items: dict[int, Prepared] = {}
        self._scene_plans: dict[tuple, object] = {}

    def __getitem__(self, i: int) -> Prepared:
        i = int(i)
        if i not in self._items:
            rec = self.dataset.records[i]
            scan, obj = record_inputs(rec, self.model.preset)
            item = self.model.prepare(scan.points, obj, [rec.p_index], scan.normals)
            if item.scene_plan is not None:
                key = (rec.task, rec.scene_seed, rec.camera_seed)
                item.scene_plan = self._scene_plans.setdefault(key, item.scene_plan)
            self._items[i] = item
        return self._items[i]

    def batch(self, indices):
        return self.model.batch([self[i] for i in indices])


@dataclass
class TrainResult:
    losses: list[float]
    steps: int
    stopped_early: bool
    trend_warning: bool
    evals: list[dict] = field(default_factory=list)
    seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _trend_warning(losses) -> bool:
    """Whether any 100-step window mean rises above the one before it."""
    w = TREND_WINDOW
    means = [float(np.mean(losses[i : i + w])) for i in range(0, len(losses) - w + 1, w)]
    return any(b > a for a, b in zip(means, means[1:]))


def train(
    model: AffordanceModel,
    dataset: Dataset,
    config: TrainConfig,
    out_dir=None,
    cache: PreparedCache | None = None,
) -> TrainResult:
    """Optimise ``model`` in place with BCE at each record's interaction point."""
    if config.variant != model.variant:
        raise ValueError(f"config variant {config.variant!r} differs from model variant {model.variant!r}")
    rng = np.random.default_rng([config.seed, 1])
    cache = cache or PreparedCache(model, dataset)
    opt = Adam(model.parameters(), config.learning_rate, decay_factor=config.decay_factor, decay_every=config.decay_every)
    labels = dataset.labels
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    losses: list[float] = []
    evals: list[dict] = []
    stopped = False
    start = time.perf_counter()
    model.train()
    for step in range(1, config.max_steps + 1):
        idx = make_batch(dataset, rng, config.batch_size)
        pred = model.forward(cache.batch(idx))
        loss, g = bce_loss(pred, labels[idx])
        if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
            raise DivergenceError(step, loss, f"prediction range [{np.min(pred)}, {np.max(pred)}]")
        model.backward(g)
        opt.step()
        losses.append(loss)
        if step % config.eval_interval == 0 or step == config.max_steps:
            report = evaluate(model, dataset, cache=cache)
            model.train()
            evals.append({"step": step, "loss": loss, "f_score": report.f_score, "ap": report.ap})
            log.info("step %d loss %.4f train F %.1f AP %.1f", step, loss, report.f_score, report.ap)
            if out is not None:
                save_model(out / "checkpoint.npz", model, {"step": step, "train_config": config.to_dict()})
            if config.target_f_score is not None and report.f_score >= config.target_f_score:
                stopped = True
                break
    model.eval()
    result = TrainResult(losses, len(losses), stopped, _trend_warning(losses), evals, time.perf_counter() - start)
    if result.trend_warning:
        log.warning("windowed training loss increased at least once")
    if out is not None:
        save_model(out / "checkpoint.npz", model, {"step": result.steps, "train_config": config.to_dict()})
        (out / "loss_curve.json").write_text(result.to_json() + "\n")
    return result


# ------------------------------------------------------------------ evaluation
@dataclass
class EvalReport:
    f_score: float
    ap: float
    tp: int
    fp: int
    fn: int
    tn: int
    threshold: float
    degenerate: bool
    per_family: dict
    count: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)


def _report(pred, labels, families, threshold) -> EvalReport:
    c = metrics.confusion(pred, labels, threshold)
    f, degenerate = metrics.f_score_details(pred, labels, threshold)
    per_family = {}
    for fam in sorted(set(families)):
        sel = np.array([x == fam for x in families])
        cf = metrics.confusion(pred[sel], labels[sel], threshold)
        per_family[fam] = {
            "f_score": metrics.f_score(pred[sel], labels[sel], threshold),
            "ap": metrics.average_precision(pred[sel], labels[sel]),
            "count": int(sel.sum()),
            "tp": cf.tp, "fp": cf.fp, "fn": cf.fn, "tn": cf.tn,
        }
    return EvalReport(f, metrics.average_precision(pred, labels), c.tp, c.fp, c.fn, c.tn, threshold, degenerate,
                      per_family, len(labels))


def predict_records(model: AffordanceModel, dataset: Dataset, cache: PreparedCache | None = None, chunk: int = 16) -> np.ndarray:
    """Critic output (eval mode) at every record's interaction point."""
    cache = cache or PreparedCache(model, dataset)
    model.eval()
    out = [model.forward(cache.batch(range(i, min(i + chunk, len(dataset))))) for i in range(0, len(dataset), chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model: AffordanceModel, dataset: Dataset, threshold: float = metrics.THRESHOLD,
             cache: PreparedCache | None = None) -> EvalReport:
    pred = predict_records(model, dataset, cache)
    return _report(pred, dataset.labels, [r.family for r in dataset.records], threshold)
