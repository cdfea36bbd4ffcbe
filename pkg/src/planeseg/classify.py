"""Pointwise inclination classification from local surface normals.

Each point's local normal is estimated by PCA over its exact k nearest
neighbors; the point is labeled H when the normal lies within 45 degrees
of the gravity axis and V otherwise. A label-injection path lets an
external classifier supply the labels instead.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from planeseg._eig3 import smallest_eigenpair_batch
from planeseg.core import Category, LabeledCloud, SegmenterConfig, unit_or_raise

__all__ = [
    "NormalEstimate",
    "NormalEstimates",
    "angle_to_baseline",
    "classify_cloud",
    "estimate_normals",
    "inject_labels",
]


@dataclass(frozen=True)
class NormalEstimate:
    """Per-point local surface estimate."""

    normal: np.ndarray  # unit 3-vector
    curvature: float    # lambda_min / trace, in [0, 1/3]
    neighbor_count: int


@dataclass(frozen=True)
class NormalEstimates:
    """Batch of per-point normal estimates (sequence of NormalEstimate).

    Attributes:
        normals: (n, 3) unit normals.
        curvatures: (n,) surface-variation values, lambda_min / trace.
        neighbor_count: neighborhood size used for every point.
    """

    normals: np.ndarray
    curvatures: np.ndarray
    neighbor_count: int

    def __len__(self) -> int:
        return len(self.normals)

    def __getitem__(self, i: int) -> NormalEstimate:
        return NormalEstimate(self.normals[i], float(self.curvatures[i]), self.neighbor_count)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("PLANESEG_THREADS", "0"))) if os.environ.get(
            "PLANESEG_THREADS"
        ) else -1
    except ValueError:
        return -1


def orient_toward(normals: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Flip normals so each has nonnegative dot with ``reference``.

    Exact-zero dots fall back to requiring x >= 0, then y >= 0, so the sign
    convention is total.
    """
    dots = normals @ reference
    nx = normals[:, 0]
    ny = normals[:, 1]
    flip = (dots < 0) | ((dots == 0) & ((nx < 0) | ((nx == 0) & (ny < 0))))
    out = normals.copy()
    out[flip] = -out[flip]
    return out


def estimate_normals(
    cloud: LabeledCloud,
    k: int,
    gravity: np.ndarray | tuple[float, float, float] = (0.0, 0.0, 1.0),
) -> NormalEstimates:
    """Estimate per-point normals by PCA over exact k-nearest neighborhoods.

    The neighborhood includes the query point itself. Normals are oriented
    toward ``gravity`` (ties resolved by the x >= 0 / y >= 0 rule).

    Args:
        cloud: input points.
        k: neighborhood size, 3 <= k <= len(cloud).
        gravity: unit reference direction for sign disambiguation.

    Raises:
        ValueError: when the cloud holds fewer than k points or k < 3.
    """
    n = len(cloud)
    if k < 3:
        raise ValueError(f"k must be at least 3, got {k}")
    if n < k:
        raise ValueError(f"cloud has {n} points, fewer than k = {k}")
    g = unit_or_raise(np.asarray(gravity, dtype=np.float64), "gravity")

    pts = cloud.points
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k, workers=_workers())
    neigh = pts[idx]                      # (n, k, 3)
    mean = neigh.mean(axis=1)
    centered = neigh - mean[:, None, :]
    cov = np.einsum("nki,nkj->nij", centered, centered)
    lam_min, vecs, tr = smallest_eigenpair_batch(cov)
    vecs = orient_toward(vecs, g)
    with np.errstate(invalid="ignore", divide="ignore"):
        curv = np.where(tr > 0, np.clip(lam_min, 0.0, None) / tr, 0.0)
    return NormalEstimates(normals=vecs, curvatures=curv, neighbor_count=k)


def angle_to_baseline(normal: np.ndarray, baseline: np.ndarray) -> float:
    """Unsigned angle in [0, pi/2] between a surface normal and a baseline axis.

    Symmetric under negation of either argument; the cosine is clamped to
    [0, 1] before arccos so numerically-unit inputs never raise.
    """
    n = unit_or_raise(np.asarray(normal, dtype=np.float64), "normal")
    b = unit_or_raise(np.asarray(baseline, dtype=np.float64), "baseline")
    c = abs(float(n @ b)) / (float(np.linalg.norm(n)) * float(np.linalg.norm(b)))
    return math.acos(min(c, 1.0))


def classify_cloud(cloud: LabeledCloud, cfg: SegmenterConfig) -> LabeledCloud:
    """Label every point H or V from its estimated local normal.

    A point is H when its normal is within 45 degrees (inclusive) of
    ``cfg.gravity``, else V.
    """
    est = estimate_normals(cloud, cfg.classify_k, cfg.gravity_vector())
    cos_to_g = np.abs(est.normals @ cfg.gravity_vector())
    # beta <= pi/4 (boundary inclusive) is cos(beta) >= cos(pi/4)
    labels = np.where(cos_to_g >= math.cos(math.pi / 4.0), Category.H, Category.V)
    return cloud.with_labels(labels.astype(np.uint8))


def inject_labels(cloud: LabeledCloud, labels: np.ndarray) -> LabeledCloud:
    """Attach externally computed labels to a cloud.

    Raises:
        ValueError: when the label count does not match the point count.
    """
    labels = np.asarray(labels, dtype=np.uint8)
    if labels.shape != (len(cloud),):
        raise ValueError(
            f"got {labels.shape[0] if labels.ndim else 0} labels for {len(cloud)} points"
        )
    return cloud.with_labels(labels)
