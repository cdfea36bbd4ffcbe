"""Iterative RANSAC plane extraction, the comparison baseline.

Planes are peeled off one at a time: a fixed budget of 3-point hypotheses
is scored on the remaining points, the best hypothesis is refit by PCA
over its inliers, and the refit plane is kept when it retains enough
support. Extraction stops when no acceptable plane remains.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from planeseg.core import DegenerateGeometryError, LabeledCloud, Plane
from planeseg.segmenter import SegmentationResult, StageTimings, fit_plane_pca

__all__ = ["RansacConfig", "ransac_segment"]

_HYPOTHESIS_CHUNK = 256  # hypotheses scored per vectorized block


@dataclass(frozen=True)
class RansacConfig:
    """Baseline parameters.

    theta_pf: inlier point-to-plane distance threshold, meters.
    max_iterations: 3-point hypotheses drawn per extracted plane.
    min_plane_points: smallest acceptable inlier support.
    """

    theta_pf: float = 0.01
    max_iterations: int = 1000
    min_plane_points: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if self.theta_pf <= 0:
            raise ValueError(f"theta_pf must be positive, got {self.theta_pf!r}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations!r}")
        if self.min_plane_points < 3:
            raise ValueError(f"min_plane_points must be >= 3, got {self.min_plane_points!r}")


def _best_hypothesis(
    pts: np.ndarray, rng: np.random.Generator, cfg: RansacConfig
) -> np.ndarray | None:
    """Score up to max_iterations random 3-point planes; return the best inlier mask."""
    n = len(pts)
    tri = rng.integers(0, n, size=(cfg.max_iterations, 3))
    a = pts[tri[:, 0]]
    normals = np.cross(pts[tri[:, 1]] - a, pts[tri[:, 2]] - a)
    norms = np.linalg.norm(normals, axis=1)
    valid = norms > 1e-12
    if not valid.any():
        return None
    normals = normals[valid] / norms[valid, None]
    a = a[valid]
    offsets = (normals * a).sum(axis=1)

    best_count = -1
    best_row = -1
    for lo in range(0, len(normals), _HYPOTHESIS_CHUNK):
        hi = min(lo + _HYPOTHESIS_CHUNK, len(normals))
        d = np.abs(normals[lo:hi] @ pts.T - offsets[lo:hi, None])
        counts = (d <= cfg.theta_pf).sum(axis=1)
        row = int(counts.argmax())
        if counts[row] > best_count:
            best_count = int(counts[row])
            best_row = lo + row
    if best_count < 3:
        return None
    d = np.abs(pts @ normals[best_row] - offsets[best_row])
    return d <= cfg.theta_pf


def ransac_segment(cloud: LabeledCloud, cfg: RansacConfig) -> SegmentationResult:
    """Extract planes by iterative RANSAC with inlier removal.

    Deterministic for a fixed seed: degenerate sample triples are skipped,
    the winning hypothesis is refit by PCA over its inliers, and the refit
    plane is accepted only if it keeps at least ``min_plane_points``
    inliers (recomputed against the refit parameters).
    """
    n = len(cloud)
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    pts = cloud.points
    remaining = np.arange(n, dtype=np.int64)
    planes: list[Plane] = []
    assignment = np.full(n, -1, dtype=np.int32)

    while len(remaining) >= max(cfg.min_plane_points, 3):
        sub = pts[remaining]
        mask = _best_hypothesis(sub, rng, cfg)
        if mask is None or mask.sum() < cfg.min_plane_points:
            break
        try:
            refit = fit_plane_pca(sub[mask], remaining[mask])
        except DegenerateGeometryError:
            break
        d = np.abs((sub - np.asarray(refit.centroid)) @ np.asarray(refit.normal))
        inliers = d <= cfg.theta_pf
        if inliers.sum() < cfg.min_plane_points:
            break
        plane = fit_plane_pca(sub[inliers], remaining[inliers])
        assignment[remaining[inliers]] = len(planes)
        planes.append(plane)
        remaining = remaining[~inliers]

    timings = StageTimings(t_s=(time.perf_counter() - t0) * 1000.0)
    return SegmentationResult(
        planes=planes,
        residual_indices=np.flatnonzero(assignment < 0).astype(np.int64),
        assignment=assignment,
        timings=timings,
    )
