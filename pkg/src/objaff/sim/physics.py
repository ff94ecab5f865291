"""Quasi-static contact: interpenetration tests, straight drops and support-polygon stability."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Point

from .primitives import TOL, Primitive, contact_region, footprints_overlap, primitives_collide, z_overlap
from .shapes import center_of_mass

STABILITY_MARGIN = 1e-3


def _xy_boxes(prims) -> np.ndarray:
    return np.array([np.r_[p.aabb()[0], p.aabb()[1]] for p in prims]).reshape(-1, 6)


def candidate_pairs(a, b, pad: float = 0.0) -> list[tuple[int, int]]:
    """Index pairs whose horizontal bounding boxes overlap (broad phase)."""
    if not a or not b:
        return []
    ba, bb = _xy_boxes(a), _xy_boxes(b)
    ok = (
        (ba[:, None, 0] - pad < bb[None, :, 3])
        & (bb[None, :, 0] < ba[:, None, 3] + pad)
        & (ba[:, None, 1] - pad < bb[None, :, 4])
        & (bb[None, :, 1] < ba[:, None, 4] + pad)
    )
    return [tuple(map(int, ij)) for ij in np.argwhere(ok)]


def colliding_pairs(a, b, tol: float = TOL) -> list[tuple[int, int]]:
    return [(i, j) for i, j in candidate_pairs(a, b) if primitives_collide(a[i], b[j], tol)]


def collision_check(a, b, tol: float = TOL) -> bool:
    """Whether two primitive sets interpenetrate by more than ``tol``."""
    return bool(colliding_pairs(list(a), list(b), tol))


def support_polygon(regions):
    """Convex hull of the union of contact regions (empty geometry when there are none)."""
    regions = [r for r in regions if not r.is_empty]
    if not regions:
        return shapely.Polygon()
    return shapely.union_all(regions).convex_hull


def is_supported(com_xy, regions, margin: float = STABILITY_MARGIN) -> bool:
    hull = support_polygon(regions)
    if hull.is_empty:
        return False
    return bool(hull.buffer(-margin).contains(Point(com_xy)))


@dataclass
class DropResult:
    descent: float  # distance travelled along -z (inf when nothing is below)
    start_collision: bool
    off_surface: bool
    stable: bool
    supports: list[Primitive] = field(default_factory=list)
    regions: list = field(default_factory=list)
    com: np.ndarray | None = None


def drop_settle(moving, obstacles, tol: float = TOL) -> DropResult:
    """Translate ``moving`` straight down until it first rests on ``obstacles``.

    The drop is solved exactly: the travel is the smallest vertical gap over
    all primitive pairs whose footprints overlap.  Stability is judged by the
    centre of mass against the hull of the resting contacts.
    """
    moving, obstacles = list(moving), list(obstacles)
    com = center_of_mass(moving)
    pairs = [(i, j) for i, j in candidate_pairs(moving, obstacles) if footprints_overlap(moving[i], obstacles[j], tol)]
    if any(z_overlap(moving[i], obstacles[j]) > tol for i, j in pairs):
        return DropResult(0.0, True, False, False, com=com)
    # obstacles above the moving set never stop a downward motion
    gaps = [(moving[i].zlo - obstacles[j].zhi, i, j) for i, j in pairs if obstacles[j].zhi <= moving[i].zlo + tol]
    if not gaps:
        return DropResult(np.inf, False, True, False, com=com)
    descent = max(min(g for g, _, _ in gaps), 0.0)
    touching = [(i, j) for g, i, j in gaps if g <= descent + tol]
    supports = [obstacles[j] for _, j in touching]
    regions = [contact_region(moving[i], obstacles[j]) for i, j in touching]
    stable = is_supported(com[:2], regions)
    return DropResult(descent, False, False, stable, supports, regions, com - np.array([0, 0, descent]))


def lowered(prims, descent: float) -> list[Primitive]:
    return [p.moved((0.0, 0.0, -descent)) for p in prims]
