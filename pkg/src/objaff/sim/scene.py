"""Procedural task scenes and their structured-text serialization."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import physics
from .primitives import Primitive
from .shapes import (
    TRAIN_FAMILIES,
    Body,
    bounds,
    door_cabinet,
    drawer_cabinet,
    move_all,
    random_item,
    relabel,
    table,
)

TASKS = ("placement", "fitting", "pushing", "stacking")
MAX_ATTEMPTS = 100
MAX_CLUTTER = 15
SCENE_FORMAT = 1


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Camera:
    """Perspective camera on a sphere around ``target``; angles in radians."""

    azimuth: float
    altitude: float
    target: tuple[float, float, float]
    distance: float = 5.0
    fov: float = math.radians(35.0)
    resolution: int = 448

    @property
    def position(self) -> np.ndarray:
        a, e = self.azimuth, self.altitude
        return np.array(self.target) + self.distance * np.array(
            [math.cos(e) * math.cos(a), math.cos(e) * math.sin(a), math.sin(e)]
        )

    @property
    def heading(self) -> float:
        """World yaw of the camera's horizontal viewing direction (the camera-base +x)."""
        return self.azimuth + math.pi


def sample_camera(rng: np.random.Generator, target, resolution: int = 448) -> Camera:
    return Camera(
        float(rng.uniform(0.0, 2 * math.pi)),
        float(math.radians(rng.uniform(30.0, 60.0))),
        tuple(float(v) for v in target),
        resolution=resolution,
    )


@dataclass(frozen=True)
class Scene:
    task: str
    seed: int
    bodies: tuple[Body, ...]
    camera: Camera
    ground: Body | None = None  # visible ground (stacking only)
    ground_z: float | None = None  # support plane, visible or not
    meta: dict = field(default_factory=dict)

    def primitives(self, include_ground: bool = True) -> list[Primitive]:
        out = [p for b in self.bodies for p in b.posed()]
        if include_ground and self.ground is not None:
            out += list(self.ground.posed())
        return out

    def body(self, name: str) -> Body:
        for b in self.bodies:
            if b.name == name:
                return b
        raise KeyError(name)

    def with_camera(self, camera: Camera) -> "Scene":
        return replace(self, camera=camera)

    def to_dict(self) -> dict:
        return {
            "format": SCENE_FORMAT,
            "task": self.task,
            "seed": self.seed,
            "bodies": [b.to_dict() for b in self.bodies],
            "ground": None if self.ground is None else self.ground.to_dict(),
            "ground_z": self.ground_z,
            "camera": {k: getattr(self.camera, k) for k in ("azimuth", "altitude", "target", "distance", "fov", "resolution")},
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        if d.get("format") != SCENE_FORMAT:
            raise ValueError(f"unsupported scene format {d.get('format')!r}")
        c = d["camera"]
        cam = Camera(c["azimuth"], c["altitude"], tuple(c["target"]), c["distance"], c["fov"], c["resolution"])
        ground = None if d["ground"] is None else Body.from_dict(d["ground"])
        return cls(d["task"], d["seed"], tuple(Body.from_dict(b) for b in d["bodies"]), cam, ground, d["ground_z"], d.get("meta", {}))


def dumps(scene: Scene) -> str:
    return json.dumps(scene.to_dict(), sort_keys=True, indent=1)


def loads(text: str) -> Scene:
    return Scene.from_dict(json.loads(text))


def save_scene(path, scene: Scene) -> None:
    Path(path).write_text(dumps(scene))


def load_scene(path) -> Scene:
    return loads(Path(path).read_text())


# ------------------------------------------------------------------ builders
def build_scene(task: str, seed: int, camera_resolution: int = 448) -> Scene:
    """Deterministic scene for ``task`` from ``seed`` (retries until collision-free)."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {TASKS}")
    rng = np.random.default_rng([seed, TASKS.index(task)])
    builder = {"placement": _placement, "fitting": _fitting, "pushing": _pushing, "stacking": _stacking}[task]
    for _ in range(MAX_ATTEMPTS):
        built = builder(rng)
        if built is None:
            continue
        bodies, ground, ground_z, meta = built
        prims = [p for b in bodies for p in b.posed()]
        lo, hi = bounds(prims)
        cam = sample_camera(rng, (lo + hi) / 2, camera_resolution)
        return Scene(task, int(seed), tuple(bodies), cam, ground, ground_z, meta)
    raise GenerationError(f"no valid {task} layout for seed {seed} after {MAX_ATTEMPTS} attempts")


def _root(rng, mode: str, kinds) -> list[Body]:
    kind = kinds[int(rng.integers(len(kinds)))]
    if kind == "table":
        return table(rng)
    if kind == "drawers":
        return drawer_cabinet(rng, mode)
    return door_cabinet(rng, mode)


def _placement(rng):
    bodies = _root(rng, "random", ("table", "drawers", "door"))
    top = [p for p in bodies[0].primitives if p.role == "countertop"][0]
    count = int(rng.integers(0, MAX_CLUTTER + 1))
    fixed = [p for b in bodies for p in b.posed()]
    slab = top.footprint()
    for i in range(count):
        family = TRAIN_FAMILIES[int(rng.integers(len(TRAIN_FAMILIES)))]
        spec = random_item(family, rng, (0.5, 0.8))
        local = spec.local_primitives()
        size = spec.size
        placed = None
        for _ in range(30):
            x = rng.uniform(top.pos[0] - top.half[0], top.pos[0] + top.half[0])
            y = rng.uniform(top.pos[1] - top.half[1], top.pos[1] + top.half[1])
            cand = move_all(local, (x, y, top.zhi + size[2] / 2))
            if physics.collision_check(cand, fixed):
                continue
            foot = [p.footprint() for p in cand]
            if not all(slab.contains(f) for f in foot):
                continue
            placed = cand
            break
        if placed is None:
            return None
        name = f"item{i}"
        body = Body(name, relabel(placed, role="item", link=name), static=False)
        bodies.append(body)
        fixed += list(body.primitives)
    return bodies, None, 0.0, {"clutter": count}


def _fitting(rng):
    return _root(rng, "one", ("drawers", "door")), None, 0.0, {}


def _pushing(rng):
    family = TRAIN_FAMILIES[int(rng.integers(len(TRAIN_FAMILIES)))]
    spec = random_item(family, rng, (1.3, 2.2))
    prims = move_all(spec.local_primitives(), (0.0, 0.0, spec.size[2] / 2))
    body = Body("object", relabel(prims, role="item", link="object"), static=False)
    base = [p for p in prims if p.zlo <= 1e-9]
    if not physics.is_supported(physics.center_of_mass(prims)[:2], [p.footprint() for p in base]):
        return None
    return [body], None, 0.0, {"family": family, "spec": spec.to_dict()}


GROUND_HALF = 0.35


def ground_body() -> Body:
    return Body("ground", (Primitive("box", (GROUND_HALF, GROUND_HALF, 0.01), (0.0, 0.0, -0.01), role="ground", link="ground"),), True)


def _stacking(rng):
    ground = ground_body()
    fams = TRAIN_FAMILIES
    support = random_item(fams[int(rng.integers(len(fams)))], rng)
    xy = rng.uniform(-0.1, 0.1, size=2)
    below = move_all(support.local_primitives(), (xy[0], xy[1], support.size[2] / 2))
    top_spec = random_item(fams[int(rng.integers(len(fams)))], rng, (1.0, 1.6))
    off = rng.uniform(-0.04, 0.04, size=2)
    h0 = support.size[2] + top_spec.size[2] / 2 + 0.05
    start = move_all(top_spec.local_primitives(), (xy[0] + off[0], xy[1] + off[1], h0))
    res = physics.drop_settle(start, list(below) + list(ground.primitives))
    if res.off_surface or res.start_collision or not res.stable:
        return None
    if any(s.link == "ground" for s in res.supports):
        return None
    rest = physics.lowered(start, res.descent)
    body = Body("object", relabel(rest, role="item", link="object"), static=False)
    meta = {"support": support.to_dict(), "support_xy": [float(v) for v in xy], "object": top_spec.to_dict()}
    return [body], ground, 0.0, meta
