"""Object-kernel point convolution network, its baselines and heatmap inference.

The acting object is slid over the scene as an explicit point kernel: for a
seed point ``p`` every (centred) object point ``o_j`` queries the scene
feature map at ``o_j + p`` by inverse-distance interpolation.  The queried
features, concatenated with the object's own per-point features, go through
a shared MLP and a max-pool; the critic scores the pooled feature together
with the scene feature at ``p`` and the object's global feature.

Variants:

* ``full``      the network above
* ``ablated``   critic sees only the scene feature at ``p`` and the global feature
* ``b_posnor``  scene features are raw (position, normal) instead of a learned encoder
* ``b_bbox``    the object is reduced to its axis-aligned box, read by small MLPs
* ``b_3branch`` critic sees scene global, object global and a seed-position embedding
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import sparse

from . import geometry
from .backbones import CloudPlan, PlanBatch, PointNet2Encoder, build_plan, canonical_start
from .config import Preset
from .nn import (
    Activation,
    Linear,
    Module,
    Sequential,
    group_max,
    group_max_backward,
    load_checkpoint_into,
    read_checkpoint_header,
    save_checkpoint,
    segment_sum,
    shared_mlp,
)

VARIANTS = ("full", "ablated", "b_posnor", "b_bbox", "b_3branch")
KERNEL_VARIANTS = ("full", "b_posnor", "b_bbox")

# b_bbox kernel: the 27 corners, edge midpoints, face centres and centre of the box
_LATTICE = np.array(np.meshgrid([-0.5, 0.0, 0.5], [-0.5, 0.0, 0.5], [-0.5, 0.0, 0.5], indexing="ij")).reshape(3, -1).T


def bbox_frame(object_points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(box centre, box size) of an object cloud."""
    lo, hi = object_points.min(axis=0), object_points.max(axis=0)
    return 0.5 * (lo + hi), hi - lo


@dataclass
class Prepared:
    """Geometry of one (scene, object, seeds) input that never changes during training."""

    scene_xyz: np.ndarray  # centred
    scene_center: np.ndarray
    seeds: np.ndarray
    scene_plan: CloudPlan | None = None
    scene_normals: np.ndarray | None = None
    object_xyz: np.ndarray | None = None  # centred object, or the box lattice for b_bbox
    object_plan: CloudPlan | None = None
    bbox6: np.ndarray | None = None
    kernel_idx: np.ndarray | None = None  # (Q, mk, t) indices into the scene
    kernel_w: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.scene_xyz)


class ModelBatch:
    """Stacked :class:`Prepared` inputs; seeds of all samples are flattened into ``Q`` rows."""

    def __init__(self, items: list[Prepared], variant: str):
        self.B = len(items)
        n = items[0].n
        if any(it.n != n for it in items):
            raise ValueError("all scenes in a batch need the same point count")
        self.n = n
        counts = np.array([len(it.seeds) for it in items])
        self.owner = np.repeat(np.arange(self.B), counts)
        self.Q = int(counts.sum())
        self.seed_rows = np.concatenate([it.seeds + b * n for b, it in enumerate(items)])
        self.seed_xyz = np.concatenate([it.scene_xyz[it.seeds] for it in items])
        self.scene = self.object = None
        if variant == "b_posnor":
            self.scene_feats = np.concatenate([np.hstack([it.scene_xyz, it.scene_normals]) for it in items])
        else:
            self.scene = PlanBatch([it.scene_plan for it in items])
        if variant == "b_bbox":
            self.bbox6 = np.stack([it.bbox6 for it in items])
            self.lattice_in = np.concatenate(
                [np.hstack([it.object_xyz, np.broadcast_to(it.bbox6, (len(it.object_xyz), 6))]) for it in items]
            )
        else:
            self.object = PlanBatch([it.object_plan for it in items])
        if variant in KERNEL_VARIANTS:
            mk = items[0].kernel_idx.shape[1]
            self.mk = mk
            idx = np.concatenate([it.kernel_idx + b * n for b, it in enumerate(items)])
            w = np.concatenate([it.kernel_w for it in items])
            t = idx.shape[-1]
            rows = self.Q * mk
            self.kernel = sparse.csr_matrix(
                (w.reshape(-1), idx.reshape(-1), np.arange(0, rows * t + 1, t)), shape=(rows, self.B * n)
            )
            self.kernel_T = self.kernel.T.tocsr()
            self.kernel_obj_rows = (self.owner[:, None] * mk + np.arange(mk)[None, :]).reshape(-1)


class AffordanceModel(Module):
    def __init__(self, preset: Preset, variant: str = "full", seed: int = 0):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        rng = np.random.default_rng(seed)
        self.preset, self.variant, self.init_seed = preset, variant, seed
        p = preset
        self.scene_dim = 6 if variant == "b_posnor" else p.f1
        if variant != "b_posnor":
            self.scene_encoder = PointNet2Encoder(replace(p.scene_encoder, out_dim=p.f1), rng)
        if variant == "b_bbox":
            self.bbox_global = Sequential(Linear(6, p.fg, rng), Activation("relu"), Linear(p.fg, p.fg, rng))
            self.bbox_point = Sequential(Linear(9, p.f2, rng), Activation("relu"))
        else:
            self.object_encoder = PointNet2Encoder(replace(p.object_encoder, out_dim=p.f2, global_dim=p.fg), rng)
        if variant in KERNEL_VARIANTS:
            self.conv = shared_mlp([self.scene_dim + p.f2, *p.conv_mlp, p.f3], rng)
        if variant == "b_3branch":
            self.seed_embed = Sequential(Linear(3, p.f3, rng), Activation("relu"))
        self.critic_in = {
            "ablated": p.f1 + p.fg,
            "b_3branch": p.f3 + p.f1 + p.fg,
        }.get(variant, p.f3 + self.scene_dim + p.fg)
        self.critic = Sequential(
            Linear(self.critic_in, p.critic_hidden, rng),
            Activation("leaky_relu"),
            Linear(p.critic_hidden, 1, rng),
            Activation("sigmoid"),
        )
        self._cache = None

    # ------------------------------------------------------------------ inputs
    def prepare(self, scene_points, object_points, seeds, scene_normals=None) -> Prepared:
        """Centre the clouds and precompute every geometric index the forward pass needs.

        ``object_points`` is the posed acting object; ``seeds`` index the scene.
        """
        return self.with_seeds(self.prepare_clouds(scene_points, object_points, scene_normals), seeds)

    def prepare_clouds(self, scene_points, object_points, scene_normals=None) -> Prepared:
        """Seed-independent part of :meth:`prepare`."""
        p = self.preset
        scene = geometry.as_points(scene_points)
        if len(scene) != p.n:
            raise ValueError(f"scene has {len(scene)} points, model expects n={p.n}")
        center = scene.mean(axis=0)
        xyz = scene - center
        prep = Prepared(xyz, center, np.zeros(0, dtype=np.intp))
        if self.variant == "b_posnor":
            if scene_normals is None:
                scene_normals = geometry.estimate_normals(scene)[0].normals
            prep.scene_normals = np.asarray(scene_normals, dtype=np.float64)
        else:
            prep.scene_plan = build_plan(xyz, p.scene_encoder)
        obj = geometry.as_points(object_points)
        if self.variant == "b_bbox":
            _, size = bbox_frame(obj)
            prep.bbox6 = np.concatenate([-0.5 * size, 0.5 * size])
            prep.object_xyz = _LATTICE * size
        else:
            if len(obj) != p.m:
                raise ValueError(f"object has {len(obj)} points, model expects m={p.m}")
            prep.object_xyz = obj - obj.mean(axis=0)
            prep.object_plan = build_plan(prep.object_xyz, p.object_encoder)
        return prep

    def with_seeds(self, prep: Prepared, seeds) -> Prepared:
        """Copy of ``prep`` evaluated at ``seeds`` (kernel query weights included)."""
        seeds = np.asarray(seeds, dtype=np.intp).reshape(-1)
        if len(seeds) == 0 or seeds.min() < 0 or seeds.max() >= prep.n:
            raise ValueError("seed indices out of range")
        out = replace(prep, seeds=seeds, kernel_idx=None, kernel_w=None)
        if self.variant in KERNEL_VARIANTS:
            q = (prep.object_xyz[None, :, :] + prep.scene_xyz[seeds][:, None, :]).reshape(-1, 3)
            idx, w = geometry.idw_weights(q, prep.scene_xyz, self.preset.t)
            mk = len(prep.object_xyz)
            out.kernel_idx = idx.reshape(len(seeds), mk, -1)
            out.kernel_w = w.reshape(len(seeds), mk, -1)
        return out

    def batch(self, items: list[Prepared]) -> ModelBatch:
        return ModelBatch(items, self.variant)

    # ------------------------------------------------------------------ passes
    def forward(self, batch: ModelBatch) -> np.ndarray:
        """Critic value for every seed row of the batch, shape ``(Q,)``."""
        v = self.variant
        if v == "b_posnor":
            FS = batch.scene_feats
        else:
            FS, _ = self.scene_encoder.forward(batch.scene)
        if v == "b_bbox":
            FO = self.bbox_point.forward(batch.lattice_in)
            Fg = self.bbox_global.forward(batch.bbox6)
        else:
            FO, Fg = self.object_encoder.forward(batch.object)
        Fg_q = Fg[batch.owner]
        cache = {"batch": batch}
        if v in KERNEL_VARIANTS:
            queried = batch.kernel @ FS
            x = np.concatenate([queried, FO[batch.kernel_obj_rows]], axis=1)
            y = self.conv.forward(x)
            Fso, arg = group_max(y.reshape(batch.Q, batch.mk, -1))
            cache["conv_arg"] = arg
            parts = [Fso, FS[batch.seed_rows], Fg_q]
        elif v == "ablated":
            parts = [FS[batch.seed_rows], Fg_q]
        else:
            emb = self.seed_embed.forward(batch.seed_xyz)
            Sg, sarg = group_max(FS.reshape(batch.B, batch.n, -1))
            cache["scene_arg"] = sarg
            parts = [emb, Sg[batch.owner], Fg_q]
        cache["widths"] = [x.shape[1] for x in parts]
        cache["n_FO"] = len(FO)
        self._cache = cache
        return self.critic.forward(np.concatenate(parts, axis=1))[:, 0]

    def backward(self, g: np.ndarray) -> None:
        """Accumulate parameter gradients for ``d loss / d forward-output = g``."""
        c = self._cache
        batch: ModelBatch = c["batch"]
        v = self.variant
        gx = self.critic.backward(np.asarray(g, dtype=np.float64).reshape(-1, 1))
        splits = np.cumsum(c["widths"])[:-1]
        gparts = np.split(gx, splits, axis=1)
        n_scene_rows = batch.B * batch.n
        gFS = None
        if v in KERNEL_VARIANTS:
            gFso, gFsp, gFg_q = gparts
            gy = group_max_backward(gFso, c["conv_arg"], batch.mk).reshape(batch.Q * batch.mk, -1)
            gxin = self.conv.backward(gy)
            sd = self.scene_dim
            gFO = segment_sum(batch.kernel_obj_rows, gxin[:, sd:], c["n_FO"])
            gFS = batch.kernel_T @ gxin[:, :sd] + segment_sum(batch.seed_rows, gFsp, n_scene_rows)
        elif v == "ablated":
            gFsp, gFg_q = gparts
            gFO = None
            gFS = segment_sum(batch.seed_rows, gFsp, n_scene_rows)
        else:
            gemb, gSg_q, gFg_q = gparts
            self.seed_embed.backward(gemb)
            gSg = segment_sum(batch.owner, gSg_q, batch.B)
            gFS = group_max_backward(gSg, c["scene_arg"], batch.n).reshape(n_scene_rows, -1)
            gFO = None
        gFg = segment_sum(batch.owner, gFg_q, batch.B)
        if v == "b_bbox":
            self.bbox_point.backward(gFO)
            self.bbox_global.backward(gFg)
        else:
            if gFO is None:
                gFO = np.zeros((c["n_FO"], self.preset.f2))
            self.object_encoder.backward(gFO, gFg)
        if v != "b_posnor":
            self.scene_encoder.backward(gFS)

    def predict_seeds(self, items: list[Prepared]) -> np.ndarray:
        return self.forward(self.batch(items))

    # ------------------------------------------------------------------ config
    def header(self) -> dict:
        return {"preset": self.preset.to_dict(), "variant": self.variant, "init_seed": self.init_seed}


def save_model(path, model: AffordanceModel, extra: dict | None = None) -> None:
    save_checkpoint(path, model, {**model.header(), **(extra or {})})


def load_model(path) -> AffordanceModel:
    meta = read_checkpoint_header(path)
    try:
        preset = Preset.from_dict(meta["preset"])
        variant = meta["variant"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: checkpoint header lacks a model config") from exc
    model = AffordanceModel(preset, variant, meta.get("init_seed", 0))
    load_checkpoint_into(path, model)
    return model.eval()


# ---------------------------------------------------------------------- heatmaps
@dataclass(frozen=True)
class Heatmap:
    values: np.ndarray  # (n,) in [0, 1]
    seeds: np.ndarray
    seed_values: np.ndarray


def seed_indices(scene_points: np.ndarray, k: int) -> np.ndarray:
    """FPS seeds from a canonical start, so seed choice ignores point order."""
    pts = geometry.as_points(scene_points)
    if not 1 <= k <= len(pts):
        raise ValueError(f"k={k} outside [1, {len(pts)}]")
    return geometry.furthest_point_sample(pts, k, canonical_start(pts))


def predict_heatmap(
    model: AffordanceModel,
    scene_points,
    object_points,
    scene_normals=None,
    k: int | None = None,
    chunk: int = 256,
) -> Heatmap:
    """Critic values at ``k`` FPS seeds, interpolated onto every scene point."""
    scene = geometry.as_points(scene_points)
    k = model.preset.k if k is None else k
    seeds = seed_indices(scene, k)
    was_training = model.training
    model.eval()
    try:
        base = model.prepare_clouds(scene, object_points, scene_normals)
        # seeds are independent in eval mode, so chunking only bounds memory
        seed_values = np.concatenate(
            [model.predict_seeds([model.with_seeds(base, seeds[s : s + chunk])]) for s in range(0, k, chunk)]
        )
    finally:
        model.train(was_training)
    seed_cloud = geometry.PointCloud(scene[seeds], features=seed_values[:, None])
    values = geometry.idw_interpolate_batch(scene, seed_cloud, model.preset.t)[:, 0]
    return Heatmap(np.clip(values, 0.0, 1.0), seeds, seed_values)


def heatmap_colors(values: np.ndarray) -> np.ndarray:
    """Value 1 maps to pure red, 0 to pure blue."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    r = np.rint(255 * v).astype(np.int64)
    return np.stack([r, np.zeros_like(r), 255 - r], axis=1)


def export_heatmap(path, scene_points, heatmap: Heatmap, scene_normals=None) -> tuple[Path, Path]:
    """Colourised PLY plus a ``<stem>.txt`` sidecar of ``index value`` lines."""
    path = Path(path)
    cloud = geometry.PointCloud(geometry.as_points(scene_points), scene_normals)
    geometry.write_ply(path, cloud, heatmap_colors(heatmap.values))
    side = path.with_suffix(".txt")
    side.write_text("".join(f"{i} {v:.9g}\n" for i, v in enumerate(heatmap.values)))
    return path, side


def read_sidecar(path) -> np.ndarray:
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    idx = np.array([int(r[0]) for r in rows])
    vals = np.array([float(r[1]) for r in rows])
    out = np.empty(len(rows))
    out[idx] = vals
    return out
