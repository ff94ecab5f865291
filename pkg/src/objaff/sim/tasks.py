"""The four interaction tasks: offsets, region masks and trial outcomes.

Interaction points ``p`` and offsets are expressed in the camera-base frame
of a :class:`~objaff.sim.render.Scan`; the trials themselves run in the world
frame.  Every numeric threshold lives in :data:`THRESHOLDS`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely

from . import physics
from .physics import candidate_pairs
from .primitives import TOL, Primitive, penetration2d, primitives_collide, z_overlap
from .render import Scan, rot_z
from .scene import TASKS, Scene
from .shapes import ActingObjectSpec, Body, bounds, center_of_mass, move_all, pose_part

THRESHOLDS = {
    "up_angle_deg": 30.0,  # "facing up" for placement / fitting
    "drop_gap": 0.01,  # placement / fitting start clearance
    "push_gap": 0.1,  # horizontal clearance behind p
    "push_lift": 0.02,
    "push_stroke": 0.09,  # travel past the clearance
    "push_step": 1e-3,
    "min_motion": 0.03,
    "max_direction_deg": 30.0,
    "friction": 0.5,
    "close_step": 1e-3,  # fraction of the joint range per closing step
    "stability_margin": physics.STABILITY_MARGIN,
}


@dataclass(frozen=True)
class Trajectory:
    direction: tuple[float, float, float]
    length: float
    step: float


@dataclass
class TrialOutcome:
    success: bool
    reason: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"success": self.success, "reason": self.reason, "diagnostics": self.diagnostics}


def compute_offset(task: str, size) -> np.ndarray:
    """Start offset of the object centre from the interaction point (camera-base frame)."""
    sx, _, sz = (float(v) for v in size)
    if task in ("placement", "fitting"):
        return np.array([0.0, 0.0, sz / 2 + THRESHOLDS["drop_gap"]])
    if task == "pushing":
        return np.array([-sx / 2 - THRESHOLDS["push_gap"], 0.0, sz / 2 + THRESHOLDS["push_lift"]])
    if task == "stacking":
        return np.array([0.0, 0.0, sz / 2])
    raise ValueError(f"unknown task {task!r}")


def trajectory(task: str) -> Trajectory:
    if task == "pushing":
        return Trajectory((1.0, 0.0, 0.0), THRESHOLDS["push_stroke"], THRESHOLDS["push_step"])
    return Trajectory((0.0, 0.0, -1.0), math.inf, 0.0)


def applicable_possible_mask(scan: Scan, task: str) -> tuple[np.ndarray, np.ndarray]:
    n = len(scan.points)
    up = scan.normals[:, 2] >= math.cos(math.radians(THRESHOLDS["up_angle_deg"])) - 1e-12
    if task == "placement":
        app = np.ones(n, dtype=bool)
        return app, app & up
    if task == "fitting":
        app = scan.roles != "countertop"
        return app, app & up
    if task == "pushing":
        app = np.ones(n, dtype=bool)
        return app, app.copy()
    if task == "stacking":
        app = scan.roles == "ground"
        return app, app.copy()
    raise ValueError(f"unknown task {task!r}")


# ------------------------------------------------------------------ trials
def _start(scene: Scene, scan: Scan, obj: ActingObjectSpec, p_cb, task: str):
    center_cb = np.asarray(p_cb, dtype=np.float64) + compute_offset(task, obj.size)
    return list(obj.placed(scan.to_world(center_cb), scan.heading))


def _settle(prims, scene: Scene):
    obstacles = scene.primitives()
    res = physics.drop_settle(prims, obstacles)
    diag = {"start_collision": res.start_collision}
    if res.start_collision:
        return res, diag, "start_collision"
    if res.off_surface:
        return res, diag, "off_surface"
    diag["descent"] = float(res.descent)
    diag["rest_roles"] = sorted({s.role for s in res.supports})
    diag["rest_links"] = sorted({s.link for s in res.supports})
    diag["final_center"] = [float(v) for v in center_of_mass(physics.lowered(prims, res.descent))]
    if not res.stable:
        return res, diag, "unstable"
    return res, diag, None


def run_placement_trial(scene: Scene, scan: Scan, obj: ActingObjectSpec, p_cb) -> TrialOutcome:
    prims = _start(scene, scan, obj, p_cb, "placement")
    res, diag, fail = _settle(prims, scene)
    diag["orientation_change"] = 0.0  # rigid translation only
    if fail:
        return TrialOutcome(False, fail, diag)
    if any(s.role != "countertop" for s in res.supports):
        return TrialOutcome(False, "not_countertop", diag)
    return TrialOutcome(True, "ok", diag)


def run_fitting_trial(scene: Scene, scan: Scan, obj: ActingObjectSpec, p_cb) -> TrialOutcome:
    prims = _start(scene, scan, obj, p_cb, "fitting")
    res, diag, fail = _settle(prims, scene)
    if fail:
        return TrialOutcome(False, fail, diag)
    if any(s.role != "cavity" for s in res.supports):
        return TrialOutcome(False, "not_in_part", diag)
    links = {s.link for s in res.supports}
    payload = physics.lowered(prims, res.descent)
    drawers = [l for l in links if l != "root"]
    if len(drawers) > 1 or (drawers and len(links) > 1):
        return TrialOutcome(False, "straddles_parts", diag)
    if drawers:
        part, carried = scene.body(drawers[0]), True
    else:
        doors = [b for b in scene.bodies if b.joint is not None and b.joint.kind == "revolute"]
        if not doors:
            return TrialOutcome(False, "not_in_part", diag)
        part, carried = doors[0], False
    closable, closed_at = close_part(scene, part, payload, carried)
    diag["part"] = part.name
    diag["closable"] = closable
    diag["blocked_at"] = closed_at
    if not closable:
        return TrialOutcome(False, "part_blocked", diag)
    return TrialOutcome(True, "ok", diag)


def close_part(scene: Scene, part: Body, payload, carried: bool) -> tuple[bool, float | None]:
    """Sweep ``part`` to its closed position in steps of the joint range.

    A carried payload moves with a prismatic part.  Returns ``(closable,
    joint position of the first blocking step)``.
    """
    joint = part.joint
    start = joint.position
    others = [p for b in scene.bodies if b.name != part.name for p in b.posed()]
    if scene.ground is not None:
        others += list(scene.ground.posed())
    static = others if carried else others + list(payload)
    step = THRESHOLDS["close_step"] * (joint.upper - joint.lower)
    count = int(math.ceil((start - joint.lower) / step - 1e-9))
    positions = [max(start - i * step, joint.lower) for i in range(1, count + 1)]
    base_payload = list(payload)

    def moving_at(q):
        out = [pose_part(p, joint, q) for p in part.primitives]
        if carried:
            shift = tuple((q - start) * a for a in joint.axis)
            out += [p.moved(shift) for p in base_payload]
        return out

    # broad phase over the whole sweep
    sweep = moving_at(start) + moving_at(joint.lower)
    lo, hi = bounds(sweep)
    if joint.kind == "revolute":
        reach = max(np.hypot(*(np.array(c[:2]) - joint.pivot)) for p in part.primitives for c in p.corners3d())
        lo[:2] = np.minimum(lo[:2], np.array(joint.pivot) - reach)
        hi[:2] = np.maximum(hi[:2], np.array(joint.pivot) + reach)
    near = []
    for p in static:
        plo, phi = p.aabb()
        if np.all(plo < hi + TOL) and np.all(lo - TOL < phi):
            near.append(p)
    if not near:
        return True, None
    for q in positions:
        if physics.collision_check(moving_at(q), near):
            return False, float(q)
    return True, None


def run_pushing_trial(scene: Scene, scan: Scan, obj: ActingObjectSpec, p_cb) -> TrialOutcome:
    prims = _start(scene, scan, obj, p_cb, "pushing")
    target = scene.primitives(include_ground=False)
    diag = {"start_collision": False, "topple": False}
    if physics.collision_check(prims, target):
        diag["start_collision"] = True
        return TrialOutcome(False, "start_collision", diag)
    fwd = rot_z(scan.heading) @ np.array([1.0, 0.0, 0.0])
    step = THRESHOLDS["push_step"]
    total = THRESHOLDS["push_gap"] + THRESHOLDS["push_stroke"]
    lo, hi = bounds(prims)
    lo2, hi2 = bounds([p.moved(tuple(total * fwd)) for p in prims])
    swept = [Primitive("box", tuple(np.maximum((np.maximum(hi, hi2) - np.minimum(lo, lo2)) / 2, 1e-9)), tuple((np.maximum(hi, hi2) + np.minimum(lo, lo2)) / 2))]
    near = [t for t in target if candidate_pairs(swept, [t]) and z_overlap(swept[0], t) > TOL]
    contact = None
    travelled = 0.0
    for i in range(1, int(round(total / step)) + 1):
        d = i * step
        moved = [p.moved(tuple(d * fwd)) for p in prims]
        hits = [(a, b) for a in moved for b in near if primitives_collide(a, b)]
        if hits:
            contact, travelled = hits, d
            break
    if contact is None:
        diag["displacement"] = [0.0, 0.0, 0.0]
        return TrialOutcome(False, "no_contact", diag)
    normals, heights, weights = [], [], []
    for a, b in contact:
        depth, axis = penetration2d(a, b)
        normals.append(axis)
        zl, zh = max(a.zlo, b.zlo), min(a.zhi, b.zhi)
        heights.append((zl + zh) / 2)
        weights.append(max(depth, 0.0) * max(zh - zl, 0.0) + 1e-12)
    w = np.array(weights)
    n2 = np.average(np.array(normals), axis=0, weights=w)
    n2 /= np.linalg.norm(n2)
    remaining = total - travelled + step  # contact begins within the last step
    cos = float(n2 @ fwd[:2])
    mag = max(remaining * cos, 0.0)
    disp = np.array([*(mag * n2), 0.0])
    angle = math.degrees(math.acos(min(max(cos, -1.0), 1.0)))
    base_z = min(t.zlo for t in target)
    h_c = float(np.average(heights, weights=w) - base_z)
    proj = np.concatenate([np.asarray(t.footprint().exterior.coords) @ fwd[:2] for t in target])
    width = float(proj.max() - proj.min())
    topple = THRESHOLDS["friction"] * h_c > width / 2
    diag.update(
        displacement=[float(v) for v in disp],
        direction_deg=angle,
        contact_height=h_c,
        footprint_width=width,
        topple=bool(topple),
        travelled=travelled,
    )
    if np.linalg.norm(disp) < THRESHOLDS["min_motion"]:
        return TrialOutcome(False, "small_motion", diag)
    if angle > THRESHOLDS["max_direction_deg"]:
        return TrialOutcome(False, "bad_direction", diag)
    if topple:
        return TrialOutcome(False, "topple", diag)
    return TrialOutcome(True, "ok", diag)


def topples(contact_height: float, width: float, friction: float | None = None) -> bool:
    mu = THRESHOLDS["friction"] if friction is None else friction
    return mu * contact_height > width / 2


def run_stacking_trial(scene: Scene, scan: Scan, obj: ActingObjectSpec, p_cb) -> TrialOutcome:
    acting = _start(scene, scan, obj, p_cb, "stacking")
    top = scene.primitives(include_ground=False)
    ground = list(scene.ground.posed()) if scene.ground is not None else []
    diag = {"start_collision": False}
    if physics.collision_check(acting, top) or physics.collision_check(acting, ground):
        diag["start_collision"] = True
        return TrialOutcome(False, "start_collision", diag)
    base = physics.drop_settle(acting, ground)
    if base.off_surface or not base.stable:
        return TrialOutcome(False, "acting_unsupported", diag)
    res = physics.drop_settle(top, acting + ground)
    if res.start_collision:
        diag["start_collision"] = True
        return TrialOutcome(False, "start_collision", diag)
    if res.off_surface:
        return TrialOutcome(False, "off_surface", diag)
    mutual = [r for r, s in zip(res.regions, res.supports) if s.link == "acting"]
    diag["descent"] = float(res.descent)
    diag["contacts_acting"] = bool(mutual)
    if not mutual:
        return TrialOutcome(False, "no_contact", diag)
    settled = physics.lowered(top, res.descent)
    if not physics.is_supported(center_of_mass(settled)[:2], mutual):
        return TrialOutcome(False, "unstable", diag)
    stack = list(acting) + settled
    if not physics.is_supported(center_of_mass(stack)[:2], base.regions):
        return TrialOutcome(False, "stack_unstable", diag)
    return TrialOutcome(True, "ok", diag)


RUNNERS = {
    "placement": run_placement_trial,
    "fitting": run_fitting_trial,
    "pushing": run_pushing_trial,
    "stacking": run_stacking_trial,
}


def run_trial(task: str, scene: Scene, scan: Scan, obj: ActingObjectSpec, p_index: int, masks=None) -> TrialOutcome:
    """Outcome of interacting at scan point ``p_index``; impossible points fail without simulation."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    app, pos = masks if masks is not None else applicable_possible_mask(scan, task)
    if not app[p_index]:
        return TrialOutcome(False, "not_applicable", {"simulated": False})
    if not pos[p_index]:
        return TrialOutcome(False, "impossible", {"simulated": False})
    out = RUNNERS[task](scene, scan, obj, scan.points[p_index])
    out.diagnostics["simulated"] = True
    return out
