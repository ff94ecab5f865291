"""Single-scale-grouping PointNet++ encoders.

The geometric part of every layer (sampling, grouping, interpolation
weights) depends only on the input cloud, so it is computed once into a
:class:`CloudPlan` and reused across training steps.  The learned part runs
on stacked plans of equally sized clouds (:class:`PlanBatch`).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse

from . import geometry
from .nn import Linear, Module, group_max, group_max_backward, shared_mlp


@dataclass(frozen=True)
class SetAbstractionSpec:
    resolution: int
    radius: float  # fraction of the cloud's bounding radius
    max_neighbors: int
    mlp: tuple[int, ...]

    @property
    def group_all(self) -> bool:
        return self.resolution == 1


@dataclass(frozen=True)
class FeaturePropagationSpec:
    mlp: tuple[int, ...]


@dataclass(frozen=True)
class EncoderConfig:
    """Abstraction layers fine-to-coarse; ``fp[i]`` produces level ``i`` features.

    Level 0 is the input cloud, level ``i + 1`` the output of ``sa[i]``.
    ``fp[i]`` interpolates level ``i + 1`` features onto level ``i`` and
    concatenates the level-``i`` skip features (raw xyz at level 0).
    """

    sa: tuple[SetAbstractionSpec, ...]
    fp: tuple[FeaturePropagationSpec, ...]
    out_dim: int
    global_dim: int = 0
    interp_t: int = 3

    def __post_init__(self):
        if len(self.sa) == 0 or len(self.fp) != len(self.sa):
            raise ValueError("need one propagation layer per abstraction layer")
        res = [s.resolution for s in self.sa]
        if any(b >= a for a, b in zip(res[:-1], res[1:])):
            raise ValueError("abstraction resolutions must strictly decrease")
        if any(s.group_all for s in self.sa[:-1]):
            raise ValueError("only the last abstraction layer may be global")
        if any(len(s.mlp) == 0 for s in self.sa) or any(len(f.mlp) == 0 for f in self.fp):
            raise ValueError("channel plans must be non-empty")
        if self.global_dim and not self.sa[-1].group_all:
            raise ValueError("a global head needs a resolution-1 final abstraction layer")

    def sa_out(self, i: int) -> int:
        return self.sa[i].mlp[-1]

    def skip_dim(self, level: int) -> int:
        return 3 if level == 0 else self.sa_out(level - 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            sa=tuple(SetAbstractionSpec(s["resolution"], s["radius"], s["max_neighbors"], tuple(s["mlp"])) for s in d["sa"]),
            fp=tuple(FeaturePropagationSpec(tuple(f["mlp"])) for f in d["fp"]),
            out_dim=d["out_dim"],
            global_dim=d.get("global_dim", 0),
            interp_t=d.get("interp_t", 3),
        )


@dataclass
class CloudPlan:
    xyz: list[np.ndarray]
    groups: list[np.ndarray]  # per abstraction layer, (P, S) indices into the previous level
    rel: list[np.ndarray]  # per abstraction layer, (P, S, 3) centroid-relative coordinates
    interp: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)  # fine <- coarse

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(x) for x in self.xyz)


def canonical_start(points: np.ndarray) -> int:
    """Index of the point furthest from the centroid (order-independent FPS seed)."""
    d = np.linalg.norm(points - points.mean(axis=0), axis=1)
    return int(np.argmax(d))


def build_plan(xyz: np.ndarray, config: EncoderConfig) -> CloudPlan:
    """Sampling, grouping and interpolation indices for a zero-centred cloud."""
    xyz = np.asarray(xyz, dtype=np.float64)
    bound = float(np.max(np.linalg.norm(xyz, axis=1))) if len(xyz) else 0.0
    bound = max(bound, 1e-9)
    levels = [xyz]
    groups, rels = [], []
    for spec in config.sa:
        prev = levels[-1]
        if spec.group_all:
            new = np.zeros((1, 3))
            idx = np.arange(len(prev))[None, :]
        else:
            if spec.resolution > len(prev):
                raise ValueError(f"resolution {spec.resolution} exceeds {len(prev)} input points")
            cent = geometry.furthest_point_sample(prev, spec.resolution, canonical_start(prev))
            new = prev[cent]
            t = min(spec.max_neighbors, len(prev))
            idx, dist = geometry.knn_batch(new, prev, t)
            outside = dist > spec.radius * bound
            idx = np.where(outside, idx[:, :1], idx)
        groups.append(idx)
        rels.append(prev[idx] - new[:, None, :])
        levels.append(new)
    interp = [geometry.idw_weights(levels[i], levels[i + 1], config.interp_t) for i in range(len(config.sa))]
    return CloudPlan(levels, groups, rels, interp)


class PlanBatch:
    """Stacked plans of ``B`` clouds with identical level sizes."""

    def __init__(self, plans: list[CloudPlan]):
        sizes = plans[0].sizes
        if any(p.sizes != sizes for p in plans):
            raise ValueError("all clouds in a batch need identical level sizes")
        self.B = len(plans)
        self.sizes = sizes
        self.xyz0 = np.concatenate([p.xyz[0] for p in plans])
        self.rel, self.gather, self.group_shape = [], [], []
        for l in range(len(sizes) - 1):
            P, S = plans[0].groups[l].shape
            self.group_shape.append((P, S))
            self.rel.append(np.concatenate([p.rel[l].reshape(-1, 3) for p in plans]))
            off = np.arange(self.B)[:, None] * sizes[l]
            g = (np.stack([p.groups[l].reshape(-1) for p in plans]) + off).reshape(-1)
            self.gather.append(g)
        self.interp = []
        for i in range(len(sizes) - 1):
            n_f, n_c = sizes[i], sizes[i + 1]
            idx = np.stack([p.interp[i][0] for p in plans])
            w = np.stack([p.interp[i][1] for p in plans])
            t = idx.shape[-1]
            cols = (idx + (np.arange(self.B) * n_c)[:, None, None]).reshape(-1)
            mat = sparse.csr_matrix(
                (w.reshape(-1), cols, np.arange(0, self.B * n_f * t + 1, t)),
                shape=(self.B * n_f, self.B * n_c),
            )
            self.interp.append(mat)
        self._gather_t = [None] * len(self.gather)

    def gather_adjoint(self, l: int):
        if self._gather_t[l] is None:
            g = self.gather[l]
            n_prev = self.B * self.sizes[l]
            self._gather_t[l] = sparse.csr_matrix(
                (np.ones(len(g)), (g, np.arange(len(g)))), shape=(n_prev, len(g))
            )
        return self._gather_t[l]


class SetAbstraction(Module):
    def __init__(self, in_channels: int, spec: SetAbstractionSpec, rng: np.random.Generator):
        self.spec = spec
        self.in_channels = in_channels
        self.mlp = shared_mlp([in_channels + 3, *spec.mlp], rng)
        self._cache = None

    def forward(self, feats, batch: PlanBatch, layer: int) -> np.ndarray:
        P, S = batch.group_shape[layer]
        rel = batch.rel[layer]
        x = rel if feats is None else np.concatenate([rel, feats[batch.gather[layer]]], axis=1)
        y = self.mlp.forward(x).reshape(batch.B * P, S, -1)
        pooled, arg = group_max(y)
        self._cache = (batch, layer, S, feats is not None)
        self._arg = arg
        return pooled

    def backward(self, g: np.ndarray):
        batch, layer, S, has_feats = self._cache
        gy = group_max_backward(g, self._arg, S).reshape(-1, g.shape[1])
        gx = self.mlp.backward(gy)
        if not has_feats:
            return None
        return batch.gather_adjoint(layer) @ gx[:, 3:]


class FeaturePropagation(Module):
    def __init__(self, coarse_channels: int, skip_channels: int, spec: FeaturePropagationSpec, rng):
        self.coarse_channels = coarse_channels
        self.mlp = shared_mlp([coarse_channels + skip_channels, *spec.mlp], rng)
        self._mat = None

    def forward(self, coarse: np.ndarray, skip: np.ndarray, mat) -> np.ndarray:
        self._mat = mat
        x = np.concatenate([mat @ coarse, skip], axis=1)
        return self.mlp.forward(x)

    def backward(self, g: np.ndarray):
        gx = self.mlp.backward(g)
        c = self.coarse_channels
        return self._mat.T @ gx[:, :c], gx[:, c:]


class PointNet2Encoder(Module):
    """Encoder-decoder returning per-point features and an optional global feature."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        sa_layers, ch = [], 0
        for spec in config.sa:
            sa_layers.append(SetAbstraction(ch, spec, rng))
            ch = spec.mlp[-1]
        self.sa = sa_layers
        L = len(config.sa)
        fp_layers: list = [None] * L
        up = config.sa_out(L - 1)
        for i in reversed(range(L)):
            fp_layers[i] = FeaturePropagation(up, config.skip_dim(i), config.fp[i], rng)
            up = config.fp[i].mlp[-1]
        self.fp = fp_layers
        self.head = Linear(config.fp[0].mlp[-1], config.out_dim, rng)
        if config.global_dim:
            self.global_head = Linear(config.sa_out(L - 1), config.global_dim, rng)
        self._B = 0

    def forward(self, batch: PlanBatch):
        feats = [None]
        for l, layer in enumerate(self.sa):
            feats.append(layer.forward(feats[-1], batch, l))
        up = feats[-1]
        for i in reversed(range(len(self.fp))):
            skip = batch.xyz0 if i == 0 else feats[i]
            up = self.fp[i].forward(up, skip, batch.interp[i])
        out = self.head.forward(up)
        glob = None
        if self.config.global_dim:
            glob = self.global_head.forward(feats[-1])
        self._B = batch.B
        return out, glob

    def backward(self, g_points: np.ndarray, g_global: np.ndarray | None = None) -> None:
        L = len(self.sa)
        g_feats: list = [None] * (L + 1)
        g_up = self.head.backward(g_points)
        for i in range(L):
            g_up, g_skip = self.fp[i].backward(g_up)
            if i > 0:
                g_feats[i] = g_skip
        g_feats[L] = g_up
        if self.config.global_dim and g_global is not None:
            g_feats[L] = g_feats[L] + self.global_head.backward(g_global)
        for l in reversed(range(L)):
            g_prev = self.sa[l].backward(g_feats[l + 1])
            if l > 0:
                g_feats[l] = g_feats[l] + g_prev


def center(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points - points.mean(axis=0)


def enc_scene(encoder: PointNet2Encoder, scene_points: np.ndarray) -> np.ndarray:
    """Per-point scene features ``(n, f1)`` for a single cloud (centred here)."""
    plan = build_plan(center(scene_points), encoder.config)
    return encoder.forward(PlanBatch([plan]))[0]


def enc_object(encoder: PointNet2Encoder, object_points: np.ndarray):
    """``(per-point features (m, f2), global feature (f_g,))`` for a single cloud."""
    plan = build_plan(center(object_points), encoder.config)
    out, glob = encoder.forward(PlanBatch([plan]))
    return out, glob[0]
