"""Procedural shape families built from primitives.

Item families (acting objects and small scene objects) are built in a local
frame with the base at ``z = 0`` and the footprint centred on the origin.
Heavy families (tables and cabinets) face +x.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .. import geometry
from .primitives import Primitive, sample_surface, surface_areas

TRAIN_FAMILIES = ("box", "can", "basket", "mug")
TEST_FAMILIES = ("bottle", "bowl")
ITEM_FAMILIES = TRAIN_FAMILIES + TEST_FAMILIES
WALL = 0.01  # wall thickness of hollow items
PANEL = 0.02  # panel thickness of furniture


@dataclass(frozen=True)
class Joint:
    """Prismatic joints slide along ``axis``; revolute joints turn about +z through ``pivot``."""

    kind: str
    axis: tuple[float, float, float]
    lower: float
    upper: float
    position: float = 0.0
    pivot: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("prismatic", "revolute"):
            raise ValueError(f"unknown joint kind {self.kind!r}")
        if not self.lower <= self.position <= self.upper:
            raise ValueError("joint position outside its limits")


@dataclass(frozen=True)
class Body:
    """A rigid body; articulated parts store their primitives at joint position 0."""

    name: str
    primitives: tuple[Primitive, ...]
    static: bool = True
    joint: Joint | None = None

    def posed(self, position: float | None = None) -> tuple[Primitive, ...]:
        if self.joint is None:
            return self.primitives
        q = self.joint.position if position is None else position
        return tuple(pose_part(p, self.joint, q) for p in self.primitives)

    def with_position(self, position: float) -> "Body":
        return replace(self, joint=replace(self.joint, position=position))

    @property
    def mass(self) -> float:
        return sum(p.volume for p in self.primitives)  # density 1

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "static": self.static,
            "joint": None if self.joint is None else asdict(self.joint),
            "primitives": [p.to_dict() for p in self.primitives],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Body":
        j = d.get("joint")
        joint = None
        if j is not None:
            joint = Joint(j["kind"], tuple(j["axis"]), j["lower"], j["upper"], j["position"], tuple(j["pivot"]))
        return cls(d["name"], tuple(Primitive.from_dict(p) for p in d["primitives"]), d["static"], joint)


def pose_part(p: Primitive, joint: Joint, q: float) -> Primitive:
    if joint.kind == "prismatic":
        return p.moved(tuple(q * a for a in joint.axis))
    return p.moved(yaw=-q, pivot=joint.pivot)  # positive angles swing the part towards +x


def center_of_mass(prims) -> np.ndarray:
    vols = np.array([p.volume for p in prims])
    pos = np.array([p.pos for p in prims])
    return vols @ pos / vols.sum()


def bounds(prims) -> tuple[np.ndarray, np.ndarray]:
    boxes = [p.aabb() for p in prims]
    return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)


def move_all(prims, offset=(0.0, 0.0, 0.0), yaw: float = 0.0) -> tuple[Primitive, ...]:
    return tuple(p.moved(offset, yaw) for p in prims)


def relabel(prims, role: str | None = None, link: str | None = None) -> tuple[Primitive, ...]:
    out = []
    for p in prims:
        out.append(replace(p, role=role or p.role, link=link or p.link))
    return tuple(out)


# ------------------------------------------------------------------ items
def _ring(radius: float, height: float, count: int, z0: float) -> list[Primitive]:
    """Thin wall boxes approximating an upright tube."""
    chord = 2 * radius * math.tan(math.pi / count) + WALL
    out = []
    for i in range(count):
        a = 2 * math.pi * i / count
        out.append(
            Primitive("box", (WALL / 2, chord / 2, height / 2), (radius * math.cos(a), radius * math.sin(a), z0 + height / 2), a)
        )
    return out


def item_primitives(family: str, rng: np.random.Generator) -> tuple[Primitive, ...]:
    """Random instance of an item family at unit scale."""
    u = rng.uniform
    if family == "box":
        hx, hy, hz = u(0.04, 0.10), u(0.04, 0.10), u(0.03, 0.09)
        prims = [Primitive("box", (hx, hy, hz), (0.0, 0.0, hz))]
    elif family == "can":
        r, hz = u(0.03, 0.06), u(0.04, 0.09)
        prims = [Primitive("cylinder", (r, r, hz), (0.0, 0.0, hz))]
    elif family == "basket":
        hx, hy, h = u(0.06, 0.11), u(0.06, 0.11), u(0.05, 0.11)
        w = WALL / 2
        prims = [
            Primitive("box", (hx, hy, w), (0.0, 0.0, w)),
            Primitive("box", (w, hy, h / 2), (hx - w, 0.0, h / 2)),
            Primitive("box", (w, hy, h / 2), (-hx + w, 0.0, h / 2)),
            Primitive("box", (hx - WALL, w, h / 2), (0.0, hy - w, h / 2)),
            Primitive("box", (hx - WALL, w, h / 2), (0.0, -hy + w, h / 2)),
        ]
    elif family == "mug":
        r, h = u(0.035, 0.06), u(0.07, 0.12)
        prims = [Primitive("cylinder", (r, r, WALL / 2), (0.0, 0.0, WALL / 2))]
        prims += _ring(r - WALL / 2, h - WALL, 8, WALL)
        prims.append(Primitive("box", (0.015, 0.006, 0.3 * h), (r + 0.015, 0.0, 0.55 * h)))
    elif family == "bottle":
        r, h = u(0.03, 0.05), u(0.10, 0.16)
        neck = 0.4 * r
        prims = [
            Primitive("cylinder", (r, r, h / 2), (0.0, 0.0, h / 2)),
            Primitive("cylinder", (neck, neck, 0.025), (0.0, 0.0, h + 0.025)),
        ]
    elif family == "bowl":
        r, h = u(0.06, 0.10), u(0.04, 0.07)
        base = 0.6 * r
        prims = [Primitive("cylinder", (base, base, WALL / 2), (0.0, 0.0, WALL / 2))]
        prims += _ring(r - WALL / 2, h - WALL, 10, WALL)
    else:
        raise ValueError(f"unknown item family {family!r}")
    return tuple(prims)


@dataclass(frozen=True)
class ActingObjectSpec:
    """An item instance posed by yaw ``q`` (about +z) and isotropic scale ``alpha``.

    ``shape_seed`` fixes the instance's random dimensions.
    """

    family: str
    shape_seed: int
    q: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.family not in ITEM_FAMILIES:
            raise ValueError(f"unknown item family {self.family!r}")
        if not self.alpha > 0:
            raise ValueError("scale must be positive")

    def local_primitives(self) -> tuple[Primitive, ...]:
        """Posed shape with its bounding box centred on the origin."""
        base = item_primitives(self.family, np.random.default_rng(self.shape_seed))
        prims = move_all([p.scaled(self.alpha) for p in base], yaw=self.q)
        lo, hi = bounds(prims)
        return relabel(move_all(prims, tuple(-(lo + hi) / 2)), role="item", link="acting")

    @property
    def size(self) -> np.ndarray:
        lo, hi = bounds(self.local_primitives())
        return hi - lo

    def placed(self, center, frame_yaw: float = 0.0) -> tuple[Primitive, ...]:
        """Primitives with the box centre at ``center`` (world), rotated into the world by ``frame_yaw``."""
        return move_all(move_all(self.local_primitives(), yaw=frame_yaw), tuple(center))

    def cloud(self, m: int, center=(0.0, 0.0, 0.0), seed: int = 0) -> np.ndarray:
        """``m`` surface points of the complete posed object (FPS over a dense sample)."""
        return sample_cloud(self.placed(center), m, seed)

    def scaled_by(self, factor: float) -> "ActingObjectSpec":
        return replace(self, alpha=self.alpha * factor)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ActingObjectSpec":
        return cls(d["family"], int(d["shape_seed"]), float(d["q"]), float(d["alpha"]))


def sample_cloud(prims, m: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    areas = np.array([surface_areas(p).sum() for p in prims])
    dense = 8 * m
    counts = rng.multinomial(dense, areas / areas.sum())
    pts = np.vstack([sample_surface(p, c, rng) for p, c in zip(prims, counts) if c])
    idx = geometry.furthest_point_sample(pts, m, 0)
    return pts[idx]


def random_item(family: str, rng: np.random.Generator, alpha_range=(0.8, 1.25)) -> ActingObjectSpec:
    return ActingObjectSpec(family, int(rng.integers(2**31)), float(rng.uniform(0, 2 * math.pi)), float(rng.uniform(*alpha_range)))


# ------------------------------------------------------------------ furniture
def table(rng: np.random.Generator) -> list[Body]:
    W, D, H = rng.uniform(0.8, 1.2), rng.uniform(0.5, 0.8), rng.uniform(0.5, 0.8)
    t = PANEL
    leg = 0.03
    prims = [Primitive("box", (D / 2, W / 2, t), (0.0, 0.0, H - t), role="countertop")]
    for sx in (-1, 1):
        for sy in (-1, 1):
            prims.append(
                Primitive("box", (leg, leg, (H - 2 * t) / 2), (sx * (D / 2 - 2 * leg), sy * (W / 2 - 2 * leg), (H - 2 * t) / 2), role="leg")
            )
    return [Body("root", tuple(prims), True)]


def _shell(W: float, D: float, H: float, plinth: float) -> list[Primitive]:
    t = PANEL
    h = t / 2
    return [
        Primitive("box", (D / 2, W / 2, h), (0.0, 0.0, H - h), role="countertop"),
        Primitive("box", (D / 2, W / 2, h), (0.0, 0.0, plinth + h), role="shell"),
        Primitive("box", (D / 2, W / 2, plinth / 2), (-0.0, 0.0, plinth / 2), role="shell"),
        Primitive("box", (D / 2, h, (H - plinth - 2 * t) / 2), (0.0, W / 2 - h, (H + plinth) / 2), role="shell"),
        Primitive("box", (D / 2, h, (H - plinth - 2 * t) / 2), (0.0, -W / 2 + h, (H + plinth) / 2), role="shell"),
        Primitive("box", (h, W / 2 - t, (H - plinth - 2 * t) / 2), (-D / 2 + h, 0.0, (H + plinth) / 2), role="shell"),
    ]


def drawer_cabinet(rng: np.random.Generator, open_mode: str) -> list[Body]:
    """Shell with 1-3 stacked drawers.

    ``open_mode``: ``"closed"`` keeps every drawer shut, ``"random"`` opens each
    with probability 1/2, ``"one"`` additionally forces at least one open.
    """
    t, gap = PANEL, 0.002
    count = int(rng.integers(1, 4))
    W, D = rng.uniform(0.6, 0.9), rng.uniform(0.45, 0.6)
    section = rng.uniform(0.18, 0.28)
    plinth = 0.05
    H = plinth + t + count * section + (count - 1) * t + t
    prims = _shell(W, D, H, plinth)
    inner_w = W / 2 - t - gap
    bodies = []
    z = plinth + t
    for i in range(count):
        if i > 0:
            prims.append(Primitive("box", ((D - t) / 2, W / 2 - t, t / 2), (t / 2, 0.0, z + t / 2), role="shell"))
            z += t
        zb = z + gap
        wall_h = 0.45 * section
        depth = D - t - 2 * gap  # from the back panel to the front face
        x_back = -D / 2 + t + gap
        x_front = D / 2
        cx = (x_back + x_front - t) / 2
        hd = (x_front - t - x_back) / 2
        dp = [
            Primitive("box", (hd, inner_w, t / 2), (cx, 0.0, zb + t / 2), role="cavity"),
            Primitive("box", (t / 2, inner_w, (section - 2 * gap) / 2), (x_front - t / 2, 0.0, zb + (section - 2 * gap) / 2), role="part"),
            Primitive("box", (t / 2, inner_w, wall_h / 2), (x_back + t / 2, 0.0, zb + t + wall_h / 2), role="part"),
            Primitive("box", (hd - t / 2, t / 2, wall_h / 2), (cx + t / 2 - t / 2, inner_w - t / 2, zb + t + wall_h / 2), role="part"),
            Primitive("box", (hd - t / 2, t / 2, wall_h / 2), (cx + t / 2 - t / 2, -inner_w + t / 2, zb + t + wall_h / 2), role="part"),
        ]
        name = f"drawer{i}"
        dp = relabel(dp, link=name)
        upper = 0.8 * depth
        bodies.append(Body(name, dp, True, Joint("prismatic", (1.0, 0.0, 0.0), 0.0, upper, 0.0)))
        z += section
    bodies = _open_parts(bodies, rng, open_mode)
    return [Body("root", tuple(prims), True), *bodies]


def door_cabinet(rng: np.random.Generator, open_mode: str) -> list[Body]:
    """Shell with one interior shelf behind a door hinged at the front-left edge."""
    t = PANEL
    W, D = rng.uniform(0.5, 0.8), rng.uniform(0.4, 0.55)
    plinth = 0.05
    inner = rng.uniform(0.4, 0.6)
    H = plinth + 2 * t + inner
    prims = _shell(W, D, H, plinth)
    prims[1] = replace(prims[1], role="cavity")
    shelf_z = plinth + t + rng.uniform(0.4, 0.6) * inner
    prims.append(Primitive("box", ((D - t) / 2 - 0.01, W / 2 - t, t / 2), (t / 2 - 0.01, 0.0, shelf_z), role="cavity"))
    door = Primitive("box", (t / 2, W / 2, (H - plinth) / 2), (D / 2 + t / 2 + 0.001, 0.0, (H + plinth) / 2), role="part", link="door")
    pivot = (D / 2 + 0.001, -W / 2)
    body = Body("door", (door,), True, Joint("revolute", (0.0, 0.0, 1.0), 0.0, math.pi / 2, 0.0, pivot))
    return [Body("root", tuple(prims), True), *_open_parts([body], rng, open_mode)]


def _open_parts(parts: list[Body], rng: np.random.Generator, mode: str) -> list[Body]:
    out = []
    for b in parts:
        lo, hi = b.joint.lower, b.joint.upper
        is_open = mode != "closed" and rng.uniform() < 0.5
        pos = float(rng.uniform(lo + 0.3 * (hi - lo), hi)) if is_open else lo
        out.append(b.with_position(pos))
    if mode == "one" and all(b.joint.position == b.joint.lower for b in out):
        i = int(rng.integers(len(out)))
        lo, hi = out[i].joint.lower, out[i].joint.upper
        out[i] = out[i].with_position(float(rng.uniform(lo + 0.3 * (hi - lo), hi)))
    return out
