"""Virtual depth camera: ray-cast a scene, back-project, subsample with FPS."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import geometry
from ..backbones import canonical_start
from .primitives import Primitive, ray_hits
from .scene import Camera, Scene, sample_camera

MAX_SUPERSAMPLE = 8


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Scan:
    """Scene points in the camera-base frame (x = horizontal view direction, z = up).

    Per-point primitive indices and labels are kept for task bookkeeping only.
    """

    points: np.ndarray
    normals: np.ndarray
    prim_index: np.ndarray
    roles: np.ndarray
    links: np.ndarray
    camera: Camera
    padded: bool
    visible: int  # distinct surface samples before subsampling
    resolution: int  # image resolution actually rendered

    @property
    def heading(self) -> float:
        return self.camera.heading

    def to_world(self, v) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) @ rot_z(self.heading).T

    def from_world(self, v) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) @ rot_z(self.heading)

    def cloud(self) -> geometry.PointCloud:
        return geometry.PointCloud(self.points, self.normals)


def camera_rays(camera: Camera, resolution: int) -> tuple[np.ndarray, np.ndarray, tuple]:
    """Unit ray directions ``(res*res, 3)`` in row-major pixel order, plus the camera basis."""
    pos = camera.position
    fwd = np.array(camera.target) - pos
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    up = np.cross(right, fwd)
    half = math.tan(camera.fov / 2)
    coords = (np.arange(resolution) + 0.5) / resolution * 2 - 1
    v, u = np.meshgrid(-coords, coords, indexing="ij")
    dirs = fwd + half * (u[..., None] * right + v[..., None] * up)
    dirs = dirs.reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs, pos, (fwd, right, up, half)


def _pixel_box(p: Primitive, pos, basis, resolution: int):
    """Inclusive pixel rectangle covering the primitive's projection (None if behind)."""
    fwd, right, up, half = basis
    rel = p.corners3d() - pos
    depth = rel @ fwd
    if np.any(depth <= 1e-9):
        return 0, resolution - 1, 0, resolution - 1
    u = (rel @ right) / depth / half
    v = (rel @ up) / depth / half
    col = (u + 1) / 2 * resolution - 0.5
    row = (1 - v) / 2 * resolution - 0.5
    c0, c1 = int(math.floor(col.min())) - 1, int(math.ceil(col.max())) + 1
    r0, r1 = int(math.floor(row.min())) - 1, int(math.ceil(row.max())) + 1
    if c1 < 0 or r1 < 0 or c0 >= resolution or r0 >= resolution:
        return None
    return max(r0, 0), min(r1, resolution - 1), max(c0, 0), min(c1, resolution - 1)


def depth_image(prims: list[Primitive], camera: Camera, resolution: int):
    """Per-pixel hit distance, primitive index and normal (index -1 on miss)."""
    dirs, pos, basis = camera_rays(camera, resolution)
    depth = np.full(len(dirs), np.inf)
    index = np.full(len(dirs), -1)
    normals = np.zeros((len(dirs), 3))
    pix = np.arange(len(dirs)).reshape(resolution, resolution)
    for k, p in enumerate(prims):
        box = _pixel_box(p, pos, basis, resolution)
        if box is None:
            continue
        r0, r1, c0, c1 = box
        sel = pix[r0 : r1 + 1, c0 : c1 + 1].reshape(-1)
        t, nrm = ray_hits(p, pos, dirs[sel])
        closer = t < depth[sel]
        sel = sel[closer]
        depth[sel] = t[closer]
        index[sel] = k
        normals[sel] = nrm[closer]
    return depth, index, normals, dirs, pos


def render_scan(scene: Scene, n: int, camera_seed: int | None = None) -> Scan:
    """Partial scan of ``scene`` with ``n`` points.

    ``camera_seed`` resamples the camera pose (same target and resolution);
    otherwise the scene's own camera is used.  The image resolution doubles
    (up to 8x) while fewer than ``2n`` surface samples are visible; if still
    short the FPS order is repeated and ``padded`` is set.
    """
    camera = scene.camera
    if camera_seed is not None:
        camera = sample_camera(np.random.default_rng([camera_seed, 7]), camera.target, camera.resolution)
    prims = scene.primitives()
    res = camera.resolution
    while True:
        depth, index, normals, dirs, pos = depth_image(prims, camera, res)
        hit = np.nonzero(index >= 0)[0]
        if len(hit) >= 2 * n or res >= camera.resolution * MAX_SUPERSAMPLE:
            break
        res *= 2
    if len(hit) == 0:
        raise ValueError("camera sees no surface")
    pts = pos + depth[hit, None] * dirs[hit]
    nrm = normals[hit]
    # face the camera even on grazing hits
    flip = np.einsum("ij,ij->i", nrm, dirs[hit]) > 0
    nrm[flip] *= -1
    idx = index[hit]
    k = min(n, len(pts))
    order = geometry.furthest_point_sample(pts, k, canonical_start(pts))
    padded = k < n
    if padded:
        order = np.resize(order, n)
    heading_rot = rot_z(camera.heading)
    roles = np.array([p.role for p in prims])
    links = np.array([p.link for p in prims])
    sel = idx[order]
    return Scan(
        points=pts[order] @ heading_rot,
        normals=nrm[order] @ heading_rot,
        prim_index=sel,
        roles=roles[sel],
        links=links[sel],
        camera=camera,
        padded=padded,
        visible=len(pts),
        resolution=res,
    )
