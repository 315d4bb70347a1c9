"""Evaluation suite: surface sampling, Chamfer distance, Coverage, Minimum
Matching Distance, and the Frechet distance over supplied embedding statistics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .isosurface import SurfaceMesh

__all__ = [
    "PointCloud",
    "EmbeddingStats",
    "sample_surface_points",
    "chamfer",
    "coverage",
    "mmd",
    "embedding_stats",
    "frechet_distance",
]


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3) float64

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"point cloud must be (N>=1, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite values")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class EmbeddingStats:
    mean: np.ndarray        # (d,)
    covariance: np.ndarray  # (d, d) symmetric

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=np.float64)
        if np.abs(cov - cov.T).max(initial=0.0) >= 1e-9:
            raise ValueError("covariance must be symmetric within 1e-9")


def sample_surface_points(mesh: SurfaceMesh, n: int, rng: np.random.Generator) -> PointCloud:
    """Uniform area-weighted surface samples (sqrt trick inside triangles)."""
    if mesh.num_faces == 0:
        raise ValueError("cannot sample an empty mesh")
    tri = mesh.vertices[mesh.faces]
    areas = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("mesh has zero total area")
    choice = rng.choice(mesh.num_faces, size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    su = np.sqrt(u)
    b0 = 1.0 - su
    b1 = su * (1.0 - v)
    b2 = su * v
    t = tri[choice]
    pts = b0[:, None] * t[:, 0] + b1[:, None] * t[:, 1] + b2[:, None] * t[:, 2]
    return PointCloud(points=pts)


def chamfer(x: PointCloud, y: PointCloud, reduction: str = "mean") -> float:
    """Symmetric squared-nearest-neighbor distance between two clouds.

    ``reduction='mean'`` averages each direction over its cloud size so the
    value is independent of N; ``'sum'`` keeps the raw sums.
    """
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    xp, yp = x.points, y.points
    d_xy = cKDTree(yp).query(xp, k=1)[0] ** 2
    d_yx = cKDTree(xp).query(yp, k=1)[0] ** 2
    if reduction == "mean":
        return float(d_xy.mean() + d_yx.mean())
    return float(d_xy.sum() + d_yx.sum())


def _as_clouds(shapes: Sequence) -> list[PointCloud]:
    return [s if isinstance(s, PointCloud) else PointCloud(np.asarray(s)) for s in shapes]


def _nearest_reference(gen: list[PointCloud], ref: list[PointCloud], distance: Callable) -> np.ndarray:
    """Index of each generated shape's nearest reference (ties -> lowest index)."""
    out = np.empty(len(gen), dtype=np.int64)
    for gi, cloud in enumerate(gen):
        dists = np.array([distance(ref[ri], cloud) for ri in range(len(ref))])
        out[gi] = int(np.argmin(dists))
    return out


def coverage(gen: Sequence, ref: Sequence, distance: Callable = chamfer) -> float:
    """Fraction of references that are the nearest match of some generated shape."""
    gen, ref = _as_clouds(gen), _as_clouds(ref)
    if not gen or not ref:
        raise ValueError("coverage requires nonempty generated and reference sets")
    matched = set(_nearest_reference(gen, ref, distance).tolist())
    return len(matched) / len(ref)


def mmd(gen: Sequence, ref: Sequence, distance: Callable = chamfer) -> float:
    """Mean over references of the distance to the nearest generated shape."""
    gen, ref = _as_clouds(gen), _as_clouds(ref)
    if not gen or not ref:
        raise ValueError("mmd requires nonempty generated and reference sets")
    total = 0.0
    for r in ref:
        total += min(distance(r, g_) for g_ in gen)
    return total / len(ref)


def embedding_stats(embeddings: np.ndarray) -> EmbeddingStats:
    """Sample mean and unbiased covariance of an (M, d) embedding matrix."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise ValueError(f"need at least 2 embedding rows, got shape {emb.shape}")
    mean = emb.mean(axis=0)
    cov = np.cov(emb, rowvar=False, ddof=1).reshape(emb.shape[1], emb.shape[1])
    return EmbeddingStats(mean=mean, covariance=cov)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(gstats: EmbeddingStats, rstats: EmbeddingStats) -> float:
    """|mu_g - mu_r|^2 + Tr(S_g + S_r - 2 (S_g S_r)^(1/2)).

    The cross term is evaluated as the PSD square root of
    S_r^(1/2) S_g S_r^(1/2) via symmetric eigendecompositions; tiny negative
    eigenvalues and results are clamped to zero.
    """
    mu_g, mu_r = np.asarray(gstats.mean, dtype=np.float64), np.asarray(rstats.mean, dtype=np.float64)
    if mu_g.shape != mu_r.shape:
        raise ValueError(f"embedding dims differ: {mu_g.shape} vs {mu_r.shape}")
    sg = np.asarray(gstats.covariance, dtype=np.float64)
    sr = np.asarray(rstats.covariance, dtype=np.float64)
    root_r = _psd_sqrt(sr)
    cross = _psd_sqrt(root_r @ sg @ root_r)
    val = float(((mu_g - mu_r) ** 2).sum() + np.trace(sg) + np.trace(sr) - 2.0 * np.trace(cross))
    if val < -1e-8:
        raise ValueError(f"frechet distance came out significantly negative: {val}")
    return max(val, 0.0)
