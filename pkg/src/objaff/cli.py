"""``objaff`` command line: data generation, training, evaluation, prediction and single trials."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datagen, geometry
from .config import PRESETS, get_preset
from .model import VARIANTS, AffordanceModel, export_heatmap, load_model, predict_heatmap
from .sim import TASKS, GenerationError, scene as scene_mod
from .sim.shapes import ITEM_FAMILIES, TEST_FAMILIES, TRAIN_FAMILIES, ActingObjectSpec
from .train import DivergenceError, TrainConfig, evaluate, train

EXIT_OK, EXIT_ARGS, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
FAMILY_SPLITS = {"train": TRAIN_FAMILIES, "test": TEST_FAMILIES}


class UsageError(Exception):
    pass


def _echo(config: dict) -> None:
    print(json.dumps(config, sort_keys=True, indent=1), flush=True)


def _object_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", choices=ITEM_FAMILIES, default="box")
    p.add_argument("--shape-seed", type=int, default=0)
    p.add_argument("--q", type=float, default=0.0, help="yaw about the up axis, radians")
    p.add_argument("--alpha", type=float, default=1.0, help="isotropic scale")


def _object_spec(args) -> ActingObjectSpec:
    try:
        return ActingObjectSpec(args.family, args.shape_seed, args.q, args.alpha)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="objaff", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, task=True):
        if task:
            p.add_argument("--task", choices=TASKS, required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
        p.add_argument("--out", required=True)
        p.add_argument("--verbose", action="store_true")

    g = sub.add_parser("gen-data", help="collect a balanced trial dataset")
    common(g)
    g.add_argument("--target-positive", type=int, default=None, help="defaults to the preset's value")
    g.add_argument("--families", choices=sorted(FAMILY_SPLITS), default="train")
    g.add_argument("--trials-per-scene", type=int, default=None)
    g.add_argument("--workers", type=int, default=1)

    t = sub.add_parser("train", help="train a critic on a dataset")
    common(t)
    t.add_argument("--variant", choices=VARIANTS, default="full")
    t.add_argument("--dataset", required=True)
    t.add_argument("--max-steps", type=int, default=None, help="defaults to the preset's value")
    t.add_argument("--eval-interval", type=int, default=1000)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--workers", type=int, default=1, help="accepted for symmetry; training is sequential")

    e = sub.add_parser("eval", help="F-score and AP of a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--verbose", action="store_true")

    p = sub.add_parser("predict", help="affordance heatmap for a scene and an acting object")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene-seed", type=int, help="generate the scene for --task from this seed")
    src.add_argument("--scene-ply", help="external scan (camera-base frame, z up)")
    p.add_argument("--task", choices=TASKS, default=None)
    p.add_argument("--k", type=int, default=None, help="seed count; defaults to the preset's value")
    p.add_argument("--out", required=True, help="output PLY path; the sidecar goes next to it")
    p.add_argument("--verbose", action="store_true")
    _object_args(p)

    s = sub.add_parser("simulate", help="run one interaction trial and dump its scene")
    common(s)
    s.add_argument("--p", type=int, default=None, help="scan point index; random possible point when omitted")
    _object_args(s)
    return ap


# ------------------------------------------------------------------ commands
def cmd_gen_data(args) -> int:
    preset = get_preset(args.preset)
    target = preset.target_positive if args.target_positive is None else args.target_positive
    if target < 1 or args.workers < 1:
        raise UsageError("--target-positive and --workers must be positive")
    families = FAMILY_SPLITS[args.families]
    tps = args.trials_per_scene or preset.trials_per_scene
    _echo({"command": "gen-data", "task": args.task, "seed": args.seed, "preset": preset.name, "target_positive": target,
           "families": list(families), "trials_per_scene": tps, "workers": args.workers, "out": args.out})
    ds = datagen.collect_dataset(args.task, target, args.seed, preset, families, tps, args.workers)
    datagen.save_dataset(args.out, ds)
    print(f"wrote {len(ds)} records ({ds.manifest.positive_count} positive) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    preset = get_preset(args.preset)
    ds = datagen.load_dataset(args.dataset)
    if ds.manifest.preset != preset.name:
        raise datagen.DatasetError(f"dataset was generated with preset {ds.manifest.preset!r}, not {preset.name!r}")
    if ds.manifest.task != args.task:
        raise datagen.DatasetError(f"dataset task is {ds.manifest.task!r}, not {args.task!r}")
    try:
        config = TrainConfig(
            batch_size=args.batch_size or preset.batch_size,
            learning_rate=preset.learning_rate if args.lr is None else args.lr,
            max_steps=preset.max_steps if args.max_steps is None else args.max_steps,
            eval_interval=args.eval_interval,
            seed=args.seed,
            variant=args.variant,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _echo({"command": "train", "task": args.task, "preset": preset.to_dict(), "dataset": args.dataset,
           "train_config": config.to_dict(), "out": args.out})
    model = AffordanceModel(preset, args.variant, args.seed)
    result = train(model, ds, config, out_dir=args.out)
    print(f"trained {result.steps} steps, final loss {result.losses[-1] if result.losses else float('nan'):.4f}")
    if result.trend_warning:
        print("warning: windowed training loss rose at least once")
    return EXIT_OK


def cmd_eval(args) -> int:
    _echo({"command": "eval", "checkpoint": args.checkpoint, "dataset": args.dataset, "out": args.out})
    model = _load(args.checkpoint)
    ds = datagen.load_dataset(args.dataset)
    if ds.manifest.preset != model.preset.name:
        raise datagen.DatasetError(f"dataset preset {ds.manifest.preset!r} differs from model preset {model.preset.name!r}")
    report = evaluate(model, ds)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(report.to_json() + "\n")
    print(f"F-score {report.f_score:.2f}  AP {report.ap:.2f}  on {report.count} records")
    return EXIT_OK


def _load(path) -> AffordanceModel:
    try:
        return load_model(path)
    except (OSError, ValueError, KeyError) as exc:
        raise datagen.DatasetError(f"cannot load checkpoint {path}: {exc}") from exc


def cmd_predict(args) -> int:
    model = _load(args.checkpoint)
    preset = model.preset
    obj = _object_spec(args)
    config = {"command": "predict", "checkpoint": args.checkpoint, "object": obj.to_dict(), "k": args.k or preset.k,
              "out": args.out, "preset": preset.name, "variant": model.variant}
    if args.scene_seed is not None:
        if args.task is None:
            raise UsageError("--scene-seed needs --task")
        config.update(task=args.task, scene_seed=args.scene_seed)
        _echo(config)
        _, scan, _ = datagen.scene_and_scan(args.task, args.scene_seed, preset.n, preset.camera_resolution)
        points, normals = scan.points, scan.normals
    else:
        config.update(scene_ply=args.scene_ply)
        _echo(config)
        try:
            cloud, _ = geometry.read_ply(args.scene_ply)
        except (OSError, ValueError) as exc:
            raise datagen.DatasetError(f"cannot read {args.scene_ply}: {exc}") from exc
        if len(cloud) < preset.n:
            raise datagen.DatasetError(f"{args.scene_ply} has {len(cloud)} points; the model needs {preset.n}")
        keep = geometry.furthest_point_sample(cloud, preset.n, 0)
        points = cloud.points[keep]
        normals = None if cloud.normals is None else cloud.normals[keep]
    if args.k is not None and not 1 <= args.k <= preset.n:
        raise UsageError(f"--k must lie in [1, {preset.n}]")
    heat = predict_heatmap(model, points, datagen.object_cloud(obj, preset.m), normals, k=args.k)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ply, side = export_heatmap(args.out, points, heat, normals)
    print(f"wrote {ply} and {side}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    preset = get_preset(args.preset)
    obj = _object_spec(args)
    _echo({"command": "simulate", "task": args.task, "seed": args.seed, "p": args.p, "preset": preset.name,
           "object": obj.to_dict(), "out": args.out})
    from .sim import applicable_possible_mask, run_trial

    scene, scan, cam = datagen.scene_and_scan(args.task, args.seed, preset.n, preset.camera_resolution)
    p = args.p
    if p is None:
        _, pos = applicable_possible_mask(scan, args.task)
        p = int(np.random.default_rng(args.seed).choice(np.nonzero(pos)[0]))
    if not 0 <= p < len(scan.points):
        raise UsageError(f"--p must lie in [0, {len(scan.points)})")
    outcome = run_trial(args.task, scene, scan, obj, p)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene_mod.save_scene(out / "scene.json", scene.with_camera(scan.camera))
    geometry.write_ply(out / "scan.ply", scan.cloud())
    result = {"p_index": p, "p": scan.points[p].tolist(), "camera_seed": cam, **outcome.to_dict()}
    (out / "outcome.json").write_text(json.dumps(result, sort_keys=True, indent=1, default=float) + "\n")
    print(f"{'success' if outcome.success else 'failure'} ({outcome.reason}) at point {p}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "simulate": cmd_simulate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (datagen.DatasetError, GenerationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
