"""Boxes and upright cylinders: poses, footprints, overlap tests, ray hits, surface samples.

Every primitive may only rotate about +z, which keeps all overlap tests
exact: two primitives interpenetrate iff their z-intervals overlap and their
horizontal footprints (rectangles or disks) overlap.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
import shapely
from shapely.geometry import Point, Polygon

TOL = 1e-6
DISK_SEGMENTS = 32
ROLES = ("countertop", "shell", "leg", "part", "cavity", "item", "ground")


@dataclass(frozen=True)
class Primitive:
    """``half`` holds box half-extents or ``(radius, radius, half-height)`` for a cylinder."""

    kind: str
    half: tuple[float, float, float]
    pos: tuple[float, float, float]
    yaw: float = 0.0
    role: str = "item"
    link: str = "root"

    def __post_init__(self):
        if self.kind not in ("box", "cylinder"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if min(self.half) <= 0:
            raise ValueError("primitive extents must be positive")
        if self.kind == "cylinder" and self.half[0] != self.half[1]:
            raise ValueError("cylinders need equal x/y radii")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        object.__setattr__(self, "half", tuple(float(v) for v in self.half))
        object.__setattr__(self, "pos", tuple(float(v) for v in self.pos))
        object.__setattr__(self, "yaw", float(self.yaw))

    @property
    def radius(self) -> float:
        return self.half[0]

    @property
    def zlo(self) -> float:
        return self.pos[2] - self.half[2]

    @property
    def zhi(self) -> float:
        return self.pos[2] + self.half[2]

    @property
    def volume(self) -> float:
        hx, hy, hz = self.half
        if self.kind == "box":
            return 8.0 * hx * hy * hz
        return math.pi * hx * hx * 2.0 * hz

    def moved(self, offset=(0.0, 0.0, 0.0), yaw: float = 0.0, pivot=(0.0, 0.0)) -> "Primitive":
        """Rotate by ``yaw`` about the vertical axis through ``pivot``, then translate."""
        c, s = math.cos(yaw), math.sin(yaw)
        x, y = self.pos[0] - pivot[0], self.pos[1] - pivot[1]
        pos = (pivot[0] + c * x - s * y + offset[0], pivot[1] + s * x + c * y + offset[1], self.pos[2] + offset[2])
        return replace(self, pos=pos, yaw=self.yaw + yaw)

    def scaled(self, alpha: float) -> "Primitive":
        return replace(self, half=tuple(alpha * h for h in self.half), pos=tuple(alpha * p for p in self.pos))

    def corners2d(self) -> np.ndarray:
        hx, hy = self.half[:2]
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array(self.pos[:2])

    def footprint(self) -> Polygon:
        if self.kind == "box":
            return Polygon(self.corners2d())
        return Point(self.pos[:2]).buffer(self.radius, quad_segs=DISK_SEGMENTS // 4)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            xy = self.corners2d()
            lo2, hi2 = xy.min(axis=0), xy.max(axis=0)
        else:
            lo2 = np.array(self.pos[:2]) - self.radius
            hi2 = np.array(self.pos[:2]) + self.radius
        return np.array([*lo2, self.zlo]), np.array([*hi2, self.zhi])

    def corners3d(self) -> np.ndarray:
        lo, hi = self.aabb()
        if self.kind == "box":
            xy = self.corners2d()
        else:
            xy = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
        return np.vstack([np.column_stack([xy, np.full(4, z)]) for z in (self.zlo, self.zhi)])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        return cls(d["kind"], tuple(d["half"]), tuple(d["pos"]), d.get("yaw", 0.0), d.get("role", "item"), d.get("link", "root"))


# ------------------------------------------------------------------ overlap tests
def z_overlap(a: Primitive, b: Primitive) -> float:
    return min(a.zhi, b.zhi) - max(a.zlo, b.zlo)


def _box_axes(p: Primitive) -> np.ndarray:
    c, s = math.cos(p.yaw), math.sin(p.yaw)
    return np.array([[c, s], [-s, c]])


def _rect_rect(a: Primitive, b: Primitive) -> tuple[float, np.ndarray]:
    """Separating-axis penetration depth and unit axis pointing from ``a`` to ``b``."""
    ca, cb = a.corners2d(), b.corners2d()
    best, best_axis = np.inf, None
    d = np.array(b.pos[:2]) - np.array(a.pos[:2])
    for axis in np.vstack([_box_axes(a), _box_axes(b)]):
        pa, pb = ca @ axis, cb @ axis
        overlap = min(pa.max(), pb.max()) - max(pa.min(), pb.min())
        if overlap < best:
            best, best_axis = overlap, axis if d @ axis >= 0 else -axis
    return float(best), best_axis


def _disk_disk(a: Primitive, b: Primitive) -> tuple[float, np.ndarray]:
    d = np.array(b.pos[:2]) - np.array(a.pos[:2])
    dist = float(np.hypot(*d))
    axis = d / dist if dist > 0 else np.array([1.0, 0.0])
    return a.radius + b.radius - dist, axis


def _rect_disk(rect: Primitive, disk: Primitive) -> tuple[float, np.ndarray]:
    """Penetration of a disk into a rectangle; axis points from rectangle to disk."""
    axes = _box_axes(rect)
    rel = np.array(disk.pos[:2]) - np.array(rect.pos[:2])
    local = axes @ rel
    h = np.array(rect.half[:2])
    clamped = np.clip(local, -h, h)
    if np.all(np.abs(local) <= h):
        # centre inside: push out through the nearest side
        gaps = h - np.abs(local)
        i = int(np.argmin(gaps))
        n_local = np.zeros(2)
        n_local[i] = 1.0 if local[i] >= 0 else -1.0
        return float(disk.radius + gaps[i]), axes.T @ n_local
    d = local - clamped
    dist = float(np.hypot(*d))
    return disk.radius - dist, axes.T @ (d / dist)


def penetration2d(a: Primitive, b: Primitive) -> tuple[float, np.ndarray]:
    """Horizontal penetration depth (negative when apart) and the a-to-b axis."""
    if a.kind == "box" and b.kind == "box":
        return _rect_rect(a, b)
    if a.kind == "cylinder" and b.kind == "cylinder":
        return _disk_disk(a, b)
    if a.kind == "box":
        return _rect_disk(a, b)
    depth, axis = _rect_disk(b, a)
    return depth, -axis


def footprints_overlap(a: Primitive, b: Primitive, tol: float = TOL) -> bool:
    return penetration2d(a, b)[0] > tol


def primitives_collide(a: Primitive, b: Primitive, tol: float = TOL) -> bool:
    """Strict interpenetration: touching faces (overlap within ``tol``) do not count."""
    return z_overlap(a, b) > tol and footprints_overlap(a, b, tol)


def contact_region(a: Primitive, b: Primitive) -> Polygon:
    return shapely.intersection(a.footprint(), b.footprint())


# ------------------------------------------------------------------ ray casting
def ray_hits(p: Primitive, origin: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Entry distance (inf on miss) and outward normal of each ray against ``p``.

    Rays starting inside the primitive are reported as misses.
    """
    c, s = math.cos(p.yaw), math.sin(p.yaw)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])  # world -> local
    o = rot @ (origin - np.array(p.pos))
    d = dirs @ rot.T
    n_rays = len(d)
    t_hit = np.full(n_rays, np.inf)
    normals = np.zeros((n_rays, 3))
    h = np.array(p.half)
    with np.errstate(divide="ignore", invalid="ignore"):
        if p.kind == "box":
            inv = 1.0 / d
            t1 = (-h - o) * inv
            t2 = (h - o) * inv
            tmin = np.minimum(t1, t2)
            tmax = np.maximum(t1, t2)
            tmin = np.where(np.isnan(tmin), -np.inf, tmin)
            tmax = np.where(np.isnan(tmax), np.inf, tmax)
            enter = tmin.max(axis=1)
            leave = tmax.min(axis=1)
            ok = (enter <= leave) & (enter > 0)
            axis = tmin.argmax(axis=1)
            t_hit[ok] = enter[ok]
            sign = -np.sign(d[np.arange(n_rays), axis])
            local_n = np.zeros((n_rays, 3))
            local_n[np.arange(n_rays), axis] = sign
        else:
            r = p.radius
            a = d[:, 0] ** 2 + d[:, 1] ** 2
            b = 2 * (o[0] * d[:, 0] + o[1] * d[:, 1])
            cc = o[0] ** 2 + o[1] ** 2 - r * r
            disc = b * b - 4 * a * cc
            sq = np.sqrt(np.maximum(disc, 0.0))
            ts = (-b - sq) / (2 * a)
            zs = o[2] + ts * d[:, 2]
            side = (disc > 0) & (a > 0) & (ts > 0) & (np.abs(zs) <= h[2])
            t_cap = np.where(d[:, 2] < 0, (h[2] - o[2]) / d[:, 2], (-h[2] - o[2]) / d[:, 2])
            xc = o[0] + t_cap * d[:, 0]
            yc = o[1] + t_cap * d[:, 1]
            cap = (d[:, 2] != 0) & (t_cap > 0) & (xc * xc + yc * yc <= r * r)
            t_side = np.where(side, ts, np.inf)
            t_cap = np.where(cap, t_cap, np.inf)
            use_side = t_side <= t_cap
            t_hit = np.minimum(t_side, t_cap)
            hit_pts = o + t_hit[:, None] * d
            local_n = np.zeros((n_rays, 3))
            hit_side = use_side & np.isfinite(t_hit)
            local_n[hit_side, :2] = hit_pts[hit_side, :2] / r
            hit_cap = ~use_side & np.isfinite(t_hit)
            local_n[hit_cap, 2] = -np.sign(d[hit_cap, 2])
    normals = local_n @ rot  # local -> world
    return t_hit, normals


# ------------------------------------------------------------------ surface samples
def surface_areas(p: Primitive) -> np.ndarray:
    hx, hy, hz = p.half
    if p.kind == "box":
        return 4.0 * np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    r = p.radius
    return np.array([2 * math.pi * r * 2 * hz, math.pi * r * r, math.pi * r * r])


def sample_surface(p: Primitive, count: int, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform random points on the primitive's surface (world frame)."""
    areas = surface_areas(p)
    face = rng.choice(len(areas), size=count, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=(count, 3))
    h = np.array(p.half)
    if p.kind == "box":
        local = u * h
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        local[np.arange(count), axis] = sign * h[axis]
    else:
        theta = rng.uniform(0.0, 2 * math.pi, size=count)
        rad = np.where(face == 0, p.radius, p.radius * np.sqrt(rng.uniform(0.0, 1.0, size=count)))
        z = np.where(face == 0, u[:, 2] * h[2], np.where(face == 1, h[2], -h[2]))
        local = np.column_stack([rad * np.cos(theta), rad * np.sin(theta), z])
    c, s = math.cos(p.yaw), math.sin(p.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.array(p.pos)
