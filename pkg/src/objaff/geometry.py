"""Point-cloud primitives shared by the network and the simulator.

Everything here is exact brute force with deterministic tie-breaking
(lowest index wins), so results are reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

UP = np.array([0.0, 0.0, 1.0])
IDW_EPS = 1e-8

# queries x points entries per distance block
_BLOCK = 1 << 21


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points with optional unit normals and per-point features."""

    points: np.ndarray
    normals: np.ndarray | None = None
    features: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise ValueError("normals and points differ in length")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-6:
                raise ValueError("normals must have unit length")
            object.__setattr__(self, "normals", nrm)
        if self.features is not None:
            feat = np.asarray(self.features, dtype=np.float64)
            if feat.ndim == 1:
                feat = feat[:, None]
            if feat.ndim != 2 or len(feat) != len(pts):
                raise ValueError("features must be an (n, c) array matching the points")
            object.__setattr__(self, "features", feat)

    def __len__(self) -> int:
        return len(self.points)

    def centered(self) -> tuple["PointCloud", np.ndarray]:
        c = self.points.mean(axis=0)
        return PointCloud(self.points - c, self.normals, self.features), c


def as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


def furthest_point_sample(cloud, k: int, start_index: int = 0) -> np.ndarray:
    """Greedy max-min sampling of ``k`` distinct indices starting at ``start_index``."""
    pts = as_points(cloud)
    n = len(pts)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    if not 0 <= start_index < n:
        raise ValueError(f"start_index={start_index} outside [0, {n})")
    x, y, z = (np.ascontiguousarray(pts[:, i]) for i in range(3))
    out = np.empty(k, dtype=np.intp)
    out[0] = start_index
    mind = np.full(n, np.inf)
    d = np.empty(n)
    tmp = np.empty(n)
    last = start_index
    for i in range(1, k):
        np.subtract(x, x[last], out=d)
        np.multiply(d, d, out=d)
        np.subtract(y, y[last], out=tmp)
        np.multiply(tmp, tmp, out=tmp)
        d += tmp
        np.subtract(z, z[last], out=tmp)
        np.multiply(tmp, tmp, out=tmp)
        d += tmp
        np.minimum(mind, d, out=mind)
        mind[last] = -1.0  # never reselect, even among duplicates
        last = int(np.argmax(mind))
        out[i] = last
    return out


def _distances(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    d = queries[:, None, :] - points[None, :, :]
    return np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2 + d[..., 2] ** 2)


def knn_batch(queries, cloud, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``t`` nearest neighbours of every query row.

    Returns ``(indices, distances)`` of shape ``(q, t)``, sorted by distance
    with ties going to the lower index.
    """
    pts = as_points(cloud)
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        raise ValueError("empty cloud")
    if not 1 <= t <= n:
        raise ValueError(f"t={t} outside [1, {n}]")
    idx_out = np.empty((len(q), t), dtype=np.intp)
    dist_out = np.empty((len(q), t))
    step = max(1, _BLOCK // n)
    for s in range(0, len(q), step):
        dist = _distances(q[s : s + step], pts)
        if t < n:
            cand = np.argpartition(dist, t - 1, axis=1)[:, :t]
        else:
            cand = np.broadcast_to(np.arange(n), dist.shape).copy()
        cd = np.take_along_axis(dist, cand, axis=1)
        order = np.lexsort((cand, cd), axis=-1)
        cand = np.take_along_axis(cand, order, axis=1)
        cd = np.take_along_axis(cd, order, axis=1)
        if t < n:
            # a tie straddling the cut may have let a higher index in
            crowded = np.nonzero((dist <= cd[:, -1:]).sum(axis=1) > t)[0]
            for r in crowded:
                o = np.lexsort((np.arange(n), dist[r]))[:t]
                cand[r] = o
                cd[r] = dist[r, o]
        idx_out[s : s + step] = cand
        dist_out[s : s + step] = cd
    return idx_out, dist_out


def knn(query, cloud, t: int) -> list[tuple[int, float]]:
    idx, dist = knn_batch(np.asarray(query, dtype=np.float64)[None], cloud, t)
    return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]


def idw_weights(queries, cloud, t: int, eps: float = IDW_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Neighbour indices and normalised inverse-distance weights, shape ``(q, t)``.

    Distances are clamped at ``eps``; a query within ``eps`` of its nearest
    neighbour gets a one-hot weight on that neighbour.
    """
    t = min(t, len(as_points(cloud)))
    idx, dist = knn_batch(queries, cloud, t)
    w = 1.0 / np.maximum(dist, eps)
    exact = dist[:, 0] <= eps
    w[exact] = 0.0
    w[exact, 0] = 1.0
    w /= w.sum(axis=1, keepdims=True)
    return idx, w


def idw_interpolate_batch(queries, cloud: PointCloud, t: int = 3, eps: float = IDW_EPS) -> np.ndarray:
    if cloud.features is None:
        raise ValueError("cloud carries no features")
    idx, w = idw_weights(queries, cloud, t, eps)
    return np.einsum("qt,qtc->qc", w, cloud.features[idx])


def idw_interpolate(query, cloud: PointCloud, t: int = 3, eps: float = IDW_EPS) -> np.ndarray:
    return idw_interpolate_batch(np.asarray(query, dtype=np.float64)[None], cloud, t, eps)[0]


def estimate_normals(cloud, k_neighbors: int = 16, viewpoint=(0.0, 0.0, 10.0)):
    """Plane-fit normals oriented towards ``viewpoint``.

    Returns the cloud with normals and a boolean mask of degenerate
    (collinear) neighbourhoods, whose normals fall back to +z.
    """
    base = cloud if isinstance(cloud, PointCloud) else PointCloud(cloud)
    pts = base.points
    if not len(pts) > k_neighbors >= 3:
        raise ValueError("need |cloud| > k_neighbors >= 3")
    idx, _ = knn_batch(pts, pts, k_neighbors)
    nb = pts[idx]
    nb = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb) / k_neighbors
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    scale = np.maximum(evals[:, 2], 1e-300)
    degenerate = evals[:, 1] <= 1e-10 * scale
    flip = np.einsum("ni,ni->n", np.asarray(viewpoint, dtype=np.float64) - pts, normals) < 0
    normals[flip] *= -1.0
    normals[degenerate] = UP
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts, normals, base.features), degenerate


def write_ply(path, cloud, colors=None) -> None:
    """ASCII PLY with x,y,z and optional nx,ny,nz and red,green,blue."""
    pc = cloud if isinstance(cloud, PointCloud) else PointCloud(cloud)
    cols = [pc.points]
    props = ["property float x", "property float y", "property float z"]
    if pc.normals is not None:
        cols.append(pc.normals)
        props += ["property float nx", "property float ny", "property float nz"]
    rgb = None
    if colors is not None:
        rgb = np.asarray(colors, dtype=np.int64).reshape(-1, 3)
        if len(rgb) != len(pc) or rgb.min(initial=0) < 0 or rgb.max(initial=0) > 255:
            raise ValueError("colors must be (n, 3) integers in [0, 255]")
        props += ["property uchar red", "property uchar green", "property uchar blue"]
    floats = np.hstack(cols)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pc)}", *props, "end_header"]
    for i, row in enumerate(floats):
        tokens = [f"{v:.6g}" for v in row]
        if rgb is not None:
            tokens += [str(int(c)) for c in rgb[i]]
        lines.append(" ".join(tokens))
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> tuple[PointCloud, np.ndarray | None]:
    """Read an ASCII PLY vertex element; returns ``(cloud, colors or None)``."""
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        count = None
        names: list[str] = []
        in_vertex = False
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "format" and tok[1] != "ascii":
                raise ValueError(f"{path}: only ASCII PLY is supported")
            if tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    count = int(tok[2])
            elif tok[0] == "property" and in_vertex:
                names.append(tok[-1])
            elif tok[0] == "end_header":
                break
        if count is None:
            raise ValueError(f"{path}: no vertex element")
        rows = [fh.readline().split() for _ in range(count)]
    try:
        data = np.array(rows, dtype=np.float64).reshape(count, len(names))
    except ValueError as exc:
        raise ValueError(f"{path}: malformed vertex rows") from exc
    col = {name: i for i, name in enumerate(names)}
    if not {"x", "y", "z"} <= col.keys():
        raise ValueError(f"{path}: vertex element lacks x/y/z")
    pts = data[:, [col["x"], col["y"], col["z"]]]
    normals = None
    if {"nx", "ny", "nz"} <= col.keys():
        normals = data[:, [col["nx"], col["ny"], col["nz"]]]
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    colors = None
    if {"red", "green", "blue"} <= col.keys():
        colors = data[:, [col["red"], col["green"], col["blue"]]].astype(np.int64)
    return PointCloud(pts, normals), colors
