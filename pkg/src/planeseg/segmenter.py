"""Multi-resolution plane segmentation by divide-and-conquer octree traversal.

Nodes are examined breadth-first. A node is conquered into a plane
candidate when it is label-pure enough, holds enough inlier points, and
those inliers fit a plane tightly; otherwise it is divided (or its points
are parked for residual assignment when it is a leaf). Candidates merge
into existing coplanar planes through cluster-level statistics updates, so
a merge never revisits individual points. Residual points finally attach
to the nearest plane within a distance threshold.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from planeseg import octree as octree_mod
from planeseg.classify import orient_toward
from planeseg.core import (
    Category,
    DegenerateGeometryError,
    LabeledCloud,
    Plane,
    SegmenterConfig,
)
from planeseg.octree import Octree, OctreeNode

__all__ = [
    "NodeVerdict",
    "SegmentationResult",
    "StageTimings",
    "VerdictKind",
    "coplanar_ok",
    "fit_plane_pca",
    "merge_planes",
    "min_inliers_ok",
    "plane_candidate_ok",
    "point_plane_distance",
    "purity_ok",
    "segment",
    "split_inliers",
]

# scatter matrices with lambda_mid below this fraction of lambda_max are
# rank-deficient: the points cannot define a plane
_RANK_EPS = 1e-10


@dataclass
class StageTimings:
    """Per-stage wall-clock durations in milliseconds."""

    t_d: float = 0.0  # downsampling
    t_c: float = 0.0  # pointwise classification
    t_b: float = 0.0  # octree construction
    t_s: float = 0.0  # traversal, merging, residual assignment

    @property
    def total_ms(self) -> float:
        return self.t_d + self.t_c + self.t_b + self.t_s

    @property
    def fps(self) -> float:
        total = self.total_ms
        return 1000.0 / total if total > 0 else float("inf")


class VerdictKind(Enum):
    DIVIDE = "divide"
    CONQUER = "conquer"
    RESIDUAL = "residual"


@dataclass(frozen=True)
class NodeVerdict:
    """Outcome of evaluating one octree node during traversal."""

    kind: VerdictKind
    depth: int
    code: int
    n_points: int
    n_out: int
    n_in: int
    e_n: float  # nan when the node was decided before fitting
    outlier_indices: np.ndarray | None = None
    plane_id: int | None = None


@dataclass
class SegmentationResult:
    """Planes plus the bookkeeping of every input point's fate.

    Attributes:
        planes: extracted planes in insertion order. ``normal`` and
            ``mse_normal`` describe the PCA fit of the conquered and merged
            members; membership fields additionally include points attached
            during residual assignment.
        residual_indices: sorted indices of points assigned to no plane.
        assignment: (n,) int32 per-point plane id, -1 where unassigned.
        timings: per-stage durations; t_d/t_c are filled by the callers
            that perform those stages.
        verdicts: per-node decision log, present when requested.
        tree: the octree the traversal ran on, for inspection/dumping.
    """

    planes: list[Plane]
    residual_indices: np.ndarray
    assignment: np.ndarray
    timings: StageTimings
    verdicts: list[NodeVerdict] | None = None
    tree: Octree | None = field(default=None, repr=False)


def split_inliers(node: OctreeNode) -> tuple[np.ndarray, np.ndarray, Category]:
    """Split a node's points into majority-label inliers and the rest.

    Ties between label counts go to H. Returns (inlier_indices,
    outlier_indices, majority_category); indices are ascending.
    """
    if node.count == 0:
        raise ValueError("cannot split an empty node")
    labels = node.tree.cloud.labels
    if labels is None:
        raise ValueError("node's cloud has no labels")
    idx = node.point_indices
    majority = Category.H if node.count_h >= node.count_v else Category.V
    mask = labels[idx] == majority
    return idx[mask], idx[~mask], majority


def purity_ok(n_out: int, r_out: float, cfg: SegmenterConfig) -> bool:
    """Purity test: few enough outliers in count and in ratio (inclusive)."""
    return n_out <= cfg.theta_n_out and r_out <= cfg.theta_r_out


def min_inliers_ok(n_in: int, cfg: SegmenterConfig) -> bool:
    """Minimum-support test: enough inliers to fit a plane (inclusive)."""
    return n_in >= cfg.theta_n_in


def plane_candidate_ok(e_n: float, cfg: SegmenterConfig) -> bool:
    """Flatness test: deviation along the normal small enough (inclusive).

    The traversal feeds this the smallest eigenvalue of the inlier scatter
    matrix (the total squared normal-deviation mass, m^2), which scales
    with support: large noisy regions divide into fragments that refit and
    merge, while genuinely flat sets of any size pass.
    """
    if e_n < 0:
        raise ValueError(f"e_n must be nonnegative, got {e_n!r}")
    return e_n <= cfg.theta_e_n


def _eig_smallest(scatter: np.ndarray) -> tuple[float, np.ndarray, float, float]:
    """Eigen-decompose a 3x3 scatter; returns (lam_min, vec_min, lam_mid, lam_max)."""
    w, v = np.linalg.eigh(scatter)
    return float(w[0]), v[:, 0], float(w[1]), float(w[2])


def fit_plane_pca(
    points: np.ndarray,
    indices: np.ndarray | None = None,
    gravity: np.ndarray | tuple[float, float, float] = (0.0, 0.0, 1.0),
) -> Plane:
    """Fit a plane to a point set by PCA.

    The normal is the eigenvector of the smallest eigenvalue of the
    centered scatter matrix, oriented toward ``gravity``; ``mse_normal``
    is that eigenvalue divided by the point count.

    Args:
        points: (n, 3) coordinates, n >= 3.
        indices: indices of these points in their source cloud; defaults
            to 0..n-1.
        gravity: reference direction for the normal's sign.

    Raises:
        DegenerateGeometryError: when the points have rank < 2 (all
            collinear or coincident).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
    n = len(pts)
    if n < 3:
        raise ValueError(f"need at least 3 points to fit a plane, got {n}")
    if indices is None:
        indices = np.arange(n, dtype=np.int64)

    mu = pts.mean(axis=0)
    centered = pts - mu
    scatter = centered.T @ centered
    scatter = (scatter + scatter.T) / 2.0
    lam0, vec, lam1, lam2 = _eig_smallest(scatter)
    if lam1 <= _RANK_EPS * max(lam2, 0.0):
        raise DegenerateGeometryError(
            f"points are rank-deficient (eigenvalues {lam0:.3e}, {lam1:.3e}, {lam2:.3e})"
        )
    normal = orient_toward(vec[None, :], np.asarray(gravity, dtype=np.float64))[0]
    second_moment = pts.T @ pts
    second_moment = (second_moment + second_moment.T) / 2.0
    return Plane(
        point_indices=np.asarray(indices, dtype=np.int64),
        count=n,
        centroid=mu,
        normal=normal,
        mse_normal=max(lam0, 0.0) / n,
        second_moment=second_moment,
    )


def coplanar_ok(p1: Plane, p2: Plane, cfg: SegmenterConfig) -> bool:
    """Decide whether two planes are fragments of the same plane.

    Requires nearly parallel normals and a centroid offset nearly
    perpendicular to both normals. Coincident centroids trivially satisfy
    the offset clauses.
    """
    th = cfg.theta_coplane
    n1 = np.asarray(p1.normal)
    n2 = np.asarray(p2.normal)
    if abs(float(n1 @ n2)) < th:
        return False
    diff = np.asarray(p1.centroid) - np.asarray(p2.centroid)
    dist = float(np.linalg.norm(diff))
    if dist == 0.0:
        return True
    return (
        abs(float(n1 @ diff)) / dist <= 1.0 - th
        and abs(float(n2 @ diff)) / dist <= 1.0 - th
    )


def merge_planes(
    p1: Plane,
    p2: Plane,
    gravity: np.ndarray | tuple[float, float, float] = (0.0, 0.0, 1.0),
) -> Plane:
    """Merge two planes through their cluster statistics.

    Second moments add, the centroid is the count-weighted mean, and the
    merged scatter is reconstructed as ``second_moment - N * mu mu^T``
    before one 3x3 eigendecomposition refreshes the normal and MSE. No
    per-point arithmetic happens over the union.

    Raises:
        ValueError: when the planes share point indices.
    """
    if np.intersect1d(p1.point_indices, p2.point_indices).size:
        raise ValueError("cannot merge planes with overlapping point sets")
    n1, n2 = p1.count, p2.count
    n = n1 + n2
    mu = (n1 * np.asarray(p1.centroid) + n2 * np.asarray(p2.centroid)) / n
    second_moment = np.asarray(p1.second_moment) + np.asarray(p2.second_moment)
    scatter = second_moment - n * np.outer(mu, mu)
    lam0, vec, lam1, lam2 = _eig_smallest(scatter)
    if lam1 <= _RANK_EPS * max(lam2, 0.0):
        raise DegenerateGeometryError("merged point set is rank-deficient")
    normal = orient_toward(vec[None, :], np.asarray(gravity, dtype=np.float64))[0]
    return Plane(
        point_indices=np.concatenate([p1.point_indices, p2.point_indices]),
        count=n,
        centroid=mu,
        normal=normal,
        mse_normal=max(lam0, 0.0) / n,
        second_moment=second_moment,
    )


def point_plane_distance(p: np.ndarray, plane: Plane) -> float | np.ndarray:
    """Unsigned point-to-plane distance |n . (p - mu)|.

    Accepts a single (3,) point (returns float) or an (n, 3) array
    (returns (n,)).
    """
    p = np.asarray(p, dtype=np.float64)
    d = (p - np.asarray(plane.centroid)) @ np.asarray(plane.normal)
    if p.ndim == 1:
        return abs(float(d))
    return np.abs(d)


class _PlaneAccumulator:
    """Grows the plane list; merges each candidate into its first coplanar match."""

    def __init__(self, cfg: SegmenterConfig, gravity: np.ndarray):
        self.cfg = cfg
        self.gravity = gravity
        self.normals = np.empty((0, 3))
        self.centroids = np.empty((0, 3))  # in the traversal's shifted frame
        self.counts = np.empty(0, dtype=np.int64)
        self.raws = np.empty((0, 3, 3))
        self.mses: list[float] = []
        self.chunks: list[list[np.ndarray]] = []

    def __len__(self) -> int:
        return len(self.chunks)

    def _find_coplanar(self, normal: np.ndarray, mu: np.ndarray) -> int:
        th = self.cfg.theta_coplane
        dots = np.abs(self.normals @ normal)
        diff = self.centroids - mu
        dist = np.linalg.norm(diff, axis=1)
        off1 = np.abs((self.normals * diff).sum(axis=1))
        off2 = np.abs(diff @ normal)
        with np.errstate(invalid="ignore", divide="ignore"):
            r1 = np.where(dist > 0, off1 / np.where(dist > 0, dist, 1.0), 0.0)
            r2 = np.where(dist > 0, off2 / np.where(dist > 0, dist, 1.0), 0.0)
        ok = (dots >= th) & (r1 <= 1.0 - th) & (r2 <= 1.0 - th)
        return int(np.argmax(ok)) if ok.any() else -1

    def _normal_uncertain(self, count: int, lam_min: float, lam_mid: float) -> bool:
        """First-order normal-direction variance check against the merge slack.

        The fitted normal's predicted sin^2 error is lam_mid*lam_min /
        (N*(lam_mid - lam_min)^2); a candidate whose own uncertainty
        exceeds the coplanarity offset tolerance (1 - theta_coplane) could
        neither anchor nor pass future merge tests, so it may not found a
        new plane.
        """
        slack = 1.0 - self.cfg.theta_coplane
        gap = lam_mid - lam_min
        if gap <= 0:
            return True
        sin2 = lam_mid * lam_min / (count * gap * gap)
        return sin2 > slack * slack

    def add_candidate(
        self,
        normal: np.ndarray,
        mu: np.ndarray,
        count: int,
        raw: np.ndarray,
        mse: float,
        ids: np.ndarray,
        lam_min: float,
        lam_mid: float,
    ) -> int:
        """Merge the candidate into its first coplanar plane or found a new one.

        Candidates with statistically unreliable normals may merge but
        never found a plane; returns -1 for a declined candidate, whose
        points then go through residual assignment.
        """
        j = self._find_coplanar(normal, mu) if len(self.chunks) else -1
        if j < 0:
            if self._normal_uncertain(count, lam_min, lam_mid):
                return -1
            self.normals = np.vstack([self.normals, normal[None, :]])
            self.centroids = np.vstack([self.centroids, mu[None, :]])
            self.counts = np.append(self.counts, count)
            self.raws = np.concatenate([self.raws, raw[None, :, :]])
            self.mses.append(mse)
            self.chunks.append([ids])
            return len(self.chunks) - 1

        n1 = int(self.counts[j])
        n = n1 + count
        merged_mu = (n1 * self.centroids[j] + count * mu) / n
        merged_raw = self.raws[j] + raw
        scatter = merged_raw - n * np.outer(merged_mu, merged_mu)
        lam0, vec, lam1, lam2 = _eig_smallest(scatter)
        self.normals[j] = orient_toward(vec[None, :], self.gravity)[0]
        self.centroids[j] = merged_mu
        self.counts[j] = n
        self.raws[j] = merged_raw
        self.mses[j] = max(lam0, 0.0) / n
        self.chunks[j].append(ids)
        return j


def _row_moments(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unpack stacked (k, 10) moment rows into counts, means, raw 3x3 moments."""
    counts = m[:, 0]
    means = m[:, 1:4] / counts[:, None]
    raw = np.empty((len(m), 3, 3))
    raw[:, 0, 0] = m[:, 4]
    raw[:, 1, 1] = m[:, 5]
    raw[:, 2, 2] = m[:, 6]
    raw[:, 0, 1] = raw[:, 1, 0] = m[:, 7]
    raw[:, 0, 2] = raw[:, 2, 0] = m[:, 8]
    raw[:, 1, 2] = raw[:, 2, 1] = m[:, 9]
    return counts, means, raw


def segment(
    cloud: LabeledCloud,
    cfg: SegmenterConfig,
    origin: np.ndarray | None = None,
    record_verdicts: bool = False,
) -> SegmentationResult:
    """Segment a labeled cloud into planes.

    Builds the octree, walks it breadth-first conquering nodes that pass
    the purity, support, and flatness tests, merges coplanar candidates
    incrementally, and finally attaches leftover points to the nearest
    plane within ``cfg.residual_distance``.

    Raises:
        ValueError: when the cloud carries no labels or is empty.
    """
    if cloud.labels is None:
        raise ValueError("segmentation requires a labeled cloud")
    t0 = time.perf_counter()
    tree = octree_mod.build(cloud, cfg, origin=origin)
    t_b = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    result = _traverse(tree, cfg, record_verdicts)
    result.timings.t_b = t_b
    result.timings.t_s = (time.perf_counter() - t0) * 1000.0
    return result


def _traverse(tree: Octree, cfg: SegmenterConfig, record_verdicts: bool) -> SegmentationResult:
    cloud = tree.cloud
    center = tree.origin + tree.extent / 2.0
    order = tree.sorted_indices
    pts = cloud.points[order] - center
    is_h = cloud.labels[order] == Category.H

    # cumulative per-label moments [1, x, y, z, xx, yy, zz, xy, xz, yz]
    mom = np.empty((len(order), 10))
    mom[:, 0] = 1.0
    mom[:, 1:4] = pts
    mom[:, 4] = pts[:, 0] * pts[:, 0]
    mom[:, 5] = pts[:, 1] * pts[:, 1]
    mom[:, 6] = pts[:, 2] * pts[:, 2]
    mom[:, 7] = pts[:, 0] * pts[:, 1]
    mom[:, 8] = pts[:, 0] * pts[:, 2]
    mom[:, 9] = pts[:, 1] * pts[:, 2]
    cum_h = np.zeros((len(order) + 1, 10))
    cum_v = np.zeros((len(order) + 1, 10))
    np.cumsum(np.where(is_h[:, None], mom, 0.0), axis=0, out=cum_h[1:])
    np.cumsum(np.where(is_h[:, None], 0.0, mom), axis=0, out=cum_v[1:])

    gravity = cfg.gravity_vector()
    acc = _PlaneAccumulator(cfg, gravity)
    residual_chunks: list[np.ndarray] = []
    verdicts: list[NodeVerdict] | None = [] if record_verdicts else None

    frontier = np.array([0], dtype=np.int64)  # root position at depth 0
    for depth in range(tree.max_depth + 1):
        if frontier.size == 0:
            break
        lv = tree.levels[depth]
        pos = frontier
        s = lv.start[pos]
        e = lv.end[pos]
        h = lv.count_h[pos]
        v = lv.count_v[pos]
        tot = h + v
        maj_h = h >= v
        n_in = np.where(maj_h, h, v)
        n_out = tot - n_in
        r_out = n_out / tot
        crit1 = (n_out <= cfg.theta_n_out) & (r_out <= cfg.theta_r_out)
        crit2 = n_in >= cfg.theta_n_in
        is_leaf = depth == tree.max_depth
        need_pca = crit1 & crit2

        k = len(pos)
        e_n = np.full(k, np.nan)       # mean squared error along the normal
        flatness = np.full(k, np.nan)  # scatter eigenvalue fed to the flatness gate
        lam_mid = np.zeros(k)
        rank_ok = np.zeros(k, dtype=bool)
        normals = np.zeros((k, 3))
        means = np.zeros((k, 3))
        counts_f = np.zeros(k)
        raws = np.zeros((k, 3, 3))
        ii = np.flatnonzero(need_pca)
        if ii.size:
            mh = cum_h[e[ii]] - cum_h[s[ii]]
            mv = cum_v[e[ii]] - cum_v[s[ii]]
            m = np.where(maj_h[ii][:, None], mh, mv)
            counts, mus, raw = _row_moments(m)
            scatter = raw - counts[:, None, None] * np.einsum("ki,kj->kij", mus, mus)
            w, vecs = np.linalg.eigh(scatter)
            flatness[ii] = np.maximum(w[:, 0], 0.0)
            e_n[ii] = np.maximum(w[:, 0], 0.0) / counts
            lam_mid[ii] = w[:, 1]
            rank_ok[ii] = w[:, 1] > _RANK_EPS * np.maximum(w[:, 2], 0.0)
            normals[ii] = orient_toward(np.ascontiguousarray(vecs[:, :, 0]), gravity)
            means[ii] = mus
            counts_f[ii] = counts
            raws[ii] = raw

        with np.errstate(invalid="ignore"):
            crit3 = need_pca & rank_ok & (flatness <= cfg.theta_e_n)
        conquer_mask = crit3
        divide_mask = (~crit1 | (need_pca & ~crit3)) & (not is_leaf)
        residual_mask = (~crit1 & is_leaf) | (crit1 & ~crit2) | (need_pca & ~crit3 & is_leaf)

        for i in np.flatnonzero(residual_mask):
            ids = order[s[i] : e[i]]
            residual_chunks.append(ids)
            if verdicts is not None:
                verdicts.append(
                    NodeVerdict(
                        kind=VerdictKind.RESIDUAL,
                        depth=depth,
                        code=int(lv.codes[pos[i]]),
                        n_points=int(tot[i]),
                        n_out=int(n_out[i]),
                        n_in=int(n_in[i]),
                        e_n=float(e_n[i]),
                    )
                )

        for i in np.flatnonzero(conquer_mask):
            sl = slice(s[i], e[i])
            ids = order[sl]
            node_h = is_h[sl]
            inlier_ids = ids[node_h] if maj_h[i] else ids[~node_h]
            outlier_ids = ids[~node_h] if maj_h[i] else ids[node_h]
            if outlier_ids.size:
                residual_chunks.append(outlier_ids)
            plane_id = acc.add_candidate(
                normals[i],
                means[i],
                int(counts_f[i]),
                raws[i],
                float(e_n[i]),
                inlier_ids,
                float(flatness[i]),
                float(lam_mid[i]),
            )
            if plane_id < 0:  # declined candidate: salvage through residual assignment
                residual_chunks.append(inlier_ids)
            if verdicts is not None:
                verdicts.append(
                    NodeVerdict(
                        kind=VerdictKind.CONQUER,
                        depth=depth,
                        code=int(lv.codes[pos[i]]),
                        n_points=int(tot[i]),
                        n_out=int(n_out[i]),
                        n_in=int(n_in[i]),
                        e_n=float(e_n[i]),
                        outlier_indices=outlier_ids,
                        plane_id=plane_id if plane_id >= 0 else None,
                    )
                )

        divided = np.flatnonzero(divide_mask)
        if divided.size and depth < tree.max_depth:
            nxt = tree.levels[depth + 1]
            pieces = []
            for i in divided:
                code = lv.codes[pos[i]]
                lo = np.searchsorted(nxt.codes, code << 3)
                hi = np.searchsorted(nxt.codes, (code + 1) << 3)
                pieces.append(np.arange(lo, hi, dtype=np.int64))
                if verdicts is not None:
                    verdicts.append(
                        NodeVerdict(
                            kind=VerdictKind.DIVIDE,
                            depth=depth,
                            code=int(code),
                            n_points=int(tot[i]),
                            n_out=int(n_out[i]),
                            n_in=int(n_in[i]),
                            e_n=float(e_n[i]),
                        )
                    )
            frontier = np.concatenate(pieces) if pieces else np.array([], dtype=np.int64)
        else:
            frontier = np.array([], dtype=np.int64)

    return _finalize(tree, cfg, acc, residual_chunks, center, verdicts)


def _finalize(
    tree: Octree,
    cfg: SegmenterConfig,
    acc: _PlaneAccumulator,
    residual_chunks: list[np.ndarray],
    center: np.ndarray,
    verdicts: list[NodeVerdict] | None,
) -> SegmentationResult:
    cloud = tree.cloud
    n_total = len(cloud)
    resid = (
        np.concatenate(residual_chunks)
        if residual_chunks
        else np.empty(0, dtype=np.int64)
    )

    n_planes = len(acc)
    attach_chunks: list[list[np.ndarray]] = [[] for _ in range(n_planes)]
    unassigned_parts = [tree.dropped_indices]
    if resid.size and n_planes:
        pts_r = cloud.points[resid] - center
        offsets = (acc.normals * acc.centroids).sum(axis=1)
        dist = np.abs(pts_r @ acc.normals.T - offsets)
        nearest = dist.argmin(axis=1)
        dmin = dist[np.arange(len(resid)), nearest]
        attach = dmin <= cfg.residual_distance
        for j in range(n_planes):
            sel = resid[attach & (nearest == j)]
            if sel.size:
                attach_chunks[j].append(sel)
        unassigned_parts.append(resid[~attach])
    else:
        unassigned_parts.append(resid)

    planes: list[Plane] = []
    assignment = np.full(n_total, -1, dtype=np.int32)
    for j in range(n_planes):
        fitted_ids = np.concatenate(acc.chunks[j])
        attached = (
            np.concatenate(attach_chunks[j]) if attach_chunks[j] else np.empty(0, np.int64)
        )
        ids = np.concatenate([fitted_ids, attached])
        count = len(ids)
        mu_s = acc.centroids[j]
        raw_s = acc.raws[j]
        n_fit = int(acc.counts[j])
        if attached.size:
            extra = cloud.points[attached] - center
            raw_s = raw_s + extra.T @ extra
            raw_s = (raw_s + raw_s.T) / 2.0
            mu_s = (n_fit * mu_s + extra.sum(axis=0)) / count
        sum_s = count * mu_s
        second_moment = (
            raw_s
            + np.outer(center, sum_s)
            + np.outer(sum_s, center)
            + count * np.outer(center, center)
        )
        planes.append(
            Plane(
                point_indices=ids,
                count=count,
                centroid=mu_s + center,
                normal=acc.normals[j],
                mse_normal=acc.mses[j],
                second_moment=second_moment,
            )
        )
        assignment[planes[-1].point_indices] = j

    residual_indices = np.sort(np.concatenate(unassigned_parts)).astype(np.int64)
    return SegmentationResult(
        planes=planes,
        residual_indices=residual_indices,
        assignment=assignment,
        timings=StageTimings(),
        verdicts=verdicts,
        tree=tree,
    )
