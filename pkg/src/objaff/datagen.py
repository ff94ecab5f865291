"""Family-balanced interaction datasets collected from the simulator.

Records keep only seeds and specs; scenes and scans are rebuilt on load.
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .config import Preset
from .sim import render, tasks
from .sim.scene import TASKS, GenerationError, Scene, build_scene
from .sim.shapes import TRAIN_FAMILIES, ActingObjectSpec, random_item

log = logging.getLogger(__name__)

DATASET_VERSION = 1
NEGATIVE_CAP = 4  # negatives kept per positive
CAMERA_TRIES = 20
MIN_POSITIVE_RATE = 1e-3
MAX_ATTEMPT_FACTOR = 200  # hard stop at this many trials per requested positive


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrialRecord:
    task: str
    scene_seed: int
    camera_seed: int
    obj: ActingObjectSpec
    p_index: int
    p: tuple[float, float, float]
    label: int
    reason: str
    family: str

    def to_json(self) -> str:
        d = asdict(self)
        d["obj"] = self.obj.to_dict()
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        d = json.loads(line)
        return cls(
            d["task"], d["scene_seed"], d["camera_seed"], ActingObjectSpec.from_dict(d["obj"]), d["p_index"],
            tuple(d["p"]), int(d["label"]), d["reason"], d["family"],
        )


# ------------------------------------------------------------------ scenes
@lru_cache(maxsize=256)
def scene_and_scan(task: str, scene_seed: int, n: int, resolution: int, camera_seed: int | None = None):
    """Scene plus scan; without ``camera_seed`` the first usable camera is searched for.

    A camera is usable when the possible region is non-empty (for fitting it
    must also show some inside-part surface).  Returns ``(scene, scan, camera_seed)``.
    """
    scene = build_scene(task, scene_seed, resolution)
    tries = [camera_seed] if camera_seed is not None else [scene_seed * CAMERA_TRIES + j for j in range(CAMERA_TRIES)]
    for cs in tries:
        scan = render.render_scan(scene, n, cs)
        _, pos = tasks.applicable_possible_mask(scan, task)
        if camera_seed is not None:
            return scene, scan, cs
        if pos.any() and (task != "fitting" or np.any(scan.roles[pos] == "cavity")):
            return scene, scan, cs
    raise GenerationError(f"no usable camera for {task} scene {scene_seed}")


def scene_trials(
    task: str,
    scene_seed: int,
    families: list[str],
    preset: Preset,
    force_impossible: bool = False,
) -> list[TrialRecord]:
    """One trial per entry of ``families`` on the same scene, at distinct points."""
    scene, scan, cam = scene_and_scan(task, scene_seed, preset.n, preset.camera_resolution)
    masks = tasks.applicable_possible_mask(scan, task)
    app, pos = masks
    pool = np.nonzero(app & ~pos if force_impossible else pos)[0]
    if len(pool) == 0:
        return []
    rng = np.random.default_rng([scene_seed, TASKS.index(task), 11])
    picks = rng.choice(pool, size=min(len(families), len(pool)), replace=False)
    out = []
    for family, p in zip(families, picks):
        obj = random_item(family, rng)
        outcome = tasks.run_trial(task, scene, scan, obj, int(p), masks)
        out.append(
            TrialRecord(task, scene_seed, cam, obj, int(p), tuple(float(v) for v in scan.points[p]),
                        int(outcome.success), outcome.reason, family)
        )
    return out


def sample_trial(task: str, seed: int, preset: Preset, family: str | None = None, force_impossible: bool = False) -> TrialRecord:
    """A single trial from one seed (its own scene)."""
    family = family or TRAIN_FAMILIES[seed % len(TRAIN_FAMILIES)]
    recs = scene_trials(task, seed, [family], preset, force_impossible)
    if not recs:
        raise DatasetError(f"scene {seed} offers no candidate interaction point")
    return recs[0]


def replay(record: TrialRecord, preset: Preset) -> tasks.TrialOutcome:
    """Re-simulate a stored record from its seeds."""
    scene, scan, _ = scene_and_scan(record.task, record.scene_seed, preset.n, preset.camera_resolution, record.camera_seed)
    return tasks.run_trial(record.task, scene, scan, record.obj, record.p_index)


# ------------------------------------------------------------------ collection
@dataclass
class DatasetManifest:
    task: str
    preset: str
    seed: int
    families: list[str]
    target_positive: int
    trials_per_scene: int
    record_count: int = 0
    positive_count: int = 0
    per_family: dict = field(default_factory=dict)
    trials_attempted: int = 0
    scenes_skipped: int = 0
    records_file: str = "records.jsonl"
    version: int = DATASET_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)


@dataclass
class Dataset:
    manifest: DatasetManifest
    records: list[TrialRecord]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    @property
    def positives(self) -> np.ndarray:
        return np.nonzero(self.labels == 1)[0]

    @property
    def negatives(self) -> np.ndarray:
        return np.nonzero(self.labels == 0)[0]

    def subset(self, indices) -> "Dataset":
        recs = [self.records[i] for i in indices]
        return Dataset(_summarize(self.manifest, recs), recs)


def _summarize(base: DatasetManifest, records: list[TrialRecord]) -> DatasetManifest:
    fam = {f: {"positive": 0, "negative": 0} for f in base.families}
    for r in records:
        fam.setdefault(r.family, {"positive": 0, "negative": 0})["positive" if r.label else "negative"] += 1
    m = DatasetManifest(**{**asdict(base), "per_family": fam})
    m.record_count = len(records)
    m.positive_count = sum(r.label for r in records)
    return m


def _scene_job(args):
    task, scene_seed, families, preset = args
    try:
        return scene_trials(task, scene_seed, families, preset)
    except GenerationError as exc:
        log.warning("skipping scene %d: %s", scene_seed, exc)
        return None


def collect_dataset(
    task: str,
    target_positive: int,
    seed: int,
    preset: Preset,
    families=TRAIN_FAMILIES,
    trials_per_scene: int | None = None,
    workers: int = 1,
) -> Dataset:
    """Trials until every family holds ``ceil(target / families)`` positives.

    Negatives are kept until they number ``NEGATIVE_CAP`` times the positive
    target.  Scenes are generated in seed order and merged in that order, so
    the result does not depend on ``workers``.
    """
    families = list(families)
    tps = trials_per_scene or preset.trials_per_scene
    quota = math.ceil(target_positive / len(families))
    neg_cap = NEGATIVE_CAP * quota * len(families)
    pos_counts = Counter()
    neg_count = 0
    kept: list[TrialRecord] = []
    attempted = skipped = 0
    base = seed * 1_000_000
    scene_index = 0
    chunk = max(4 * workers, 8)
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        while any(pos_counts[f] < quota for f in families):
            jobs = []
            for i in range(scene_index, scene_index + chunk):
                fams = [families[(i * tps + j) % len(families)] for j in range(tps)]
                jobs.append((task, base + i, fams, preset))
            scene_index += chunk
            results = list(pool.map(_scene_job, jobs)) if pool else [_scene_job(j) for j in jobs]
            for recs in results:
                if recs is None:
                    skipped += 1
                    continue
                for r in recs:
                    attempted += 1
                    if r.label:
                        if pos_counts[r.family] < quota:
                            pos_counts[r.family] += 1
                            kept.append(r)
                    elif neg_count < neg_cap:
                        neg_count += 1
                        kept.append(r)
            total_pos = sum(pos_counts.values())
            if attempted >= 10 * target_positive and total_pos < MIN_POSITIVE_RATE * attempted:
                raise DatasetError(
                    f"{task}: positive rate {total_pos}/{attempted} below {MIN_POSITIVE_RATE:.1%} after {attempted} trials"
                )
            if attempted >= MAX_ATTEMPT_FACTOR * max(target_positive, 1):
                raise DatasetError(f"{task}: quotas unmet after {attempted} trials (have {dict(pos_counts)})")
    finally:
        if pool:
            pool.shutdown()
    manifest = DatasetManifest(task, preset.name, seed, families, target_positive, tps)
    manifest = _summarize(manifest, kept)
    manifest.trials_attempted = attempted
    manifest.scenes_skipped = skipped
    return Dataset(manifest, kept)


def save_dataset(out_dir, dataset: Dataset) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / dataset.manifest.records_file).write_text("".join(r.to_json() + "\n" for r in dataset.records))
    (out / "manifest.json").write_text(dataset.manifest.to_json() + "\n")
    return out


def load_dataset(path) -> Dataset:
    path = Path(path)
    mpath = path / "manifest.json" if path.is_dir() else path
    try:
        meta = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {mpath}: {exc}") from exc
    if meta.get("version") != DATASET_VERSION:
        raise DatasetError(f"{mpath}: unsupported dataset version {meta.get('version')!r}")
    manifest = DatasetManifest(**meta)
    try:
        lines = (mpath.parent / manifest.records_file).read_text().splitlines()
        records = [TrialRecord.from_json(line) for line in lines if line.strip()]
    except (OSError, KeyError, ValueError) as exc:
        raise DatasetError(f"cannot read records next to {mpath}: {exc}") from exc
    check = _summarize(manifest, records)
    if (check.record_count, check.positive_count) != (manifest.record_count, manifest.positive_count):
        raise DatasetError(f"{mpath}: counts disagree with the record file")
    return Dataset(manifest, records)


# ------------------------------------------------------------------ model inputs
def object_cloud(obj: ActingObjectSpec, m: int) -> np.ndarray:
    """Complete posed acting-object cloud in the scan frame, centred on its box."""
    return obj.cloud(m, seed=obj.shape_seed)


def record_inputs(record: TrialRecord, preset: Preset):
    """``(scan, object_points)`` for a record, rebuilt from its seeds."""
    _, scan, _ = scene_and_scan(record.task, record.scene_seed, preset.n, preset.camera_resolution, record.camera_seed)
    return scan, object_cloud(record.obj, preset.m)
