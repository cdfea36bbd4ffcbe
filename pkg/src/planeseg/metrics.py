"""Segmentation quality metrics and suite-level aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from planeseg.core import PlanesegError
from planeseg.segmenter import SegmentationResult, StageTimings
from planeseg.synth import GroundTruthScene

__all__ = [
    "EvalReport",
    "SceneEval",
    "aggregate_report",
    "directional_error",
    "evaluate_scene",
    "format_report",
    "match_planes",
    "missing_ratio",
    "plane_count_ratio",
]


@dataclass(frozen=True)
class SceneEval:
    """Metrics for one scene."""

    name: str
    alpha_deg: float  # nan when no segmented plane matched a true plane
    r_p_percent: float
    r_m_percent: float
    n_segmented: int
    n_gt: int


@dataclass(frozen=True)
class EvalReport:
    """Suite-level metric aggregate.

    alpha_deg averages per-scene mean angular errors; r_p_percent and
    r_m_percent average the per-scene ratios.
    """

    alpha_deg: float
    r_p_percent: float
    r_m_percent: float
    per_scene: list[SceneEval] = field(repr=False)
    timings_ms: StageTimings | None = None
    fps: float = float("nan")

    def __post_init__(self) -> None:
        if not math.isnan(self.alpha_deg) and not 0.0 <= self.alpha_deg <= 90.0:
            raise ValueError(f"alpha_deg out of [0, 90]: {self.alpha_deg!r}")
        if not math.isnan(self.r_m_percent) and not 0.0 <= self.r_m_percent <= 100.0:
            raise ValueError(f"r_m_percent out of [0, 100]: {self.r_m_percent!r}")
        if not math.isnan(self.r_p_percent) and self.r_p_percent < 0.0:
            raise ValueError(f"r_p_percent must be nonnegative: {self.r_p_percent!r}")


def match_planes(result: SegmentationResult, gt: GroundTruthScene) -> list[int | None]:
    """Map each segmented plane to the true plane owning most of its points.

    Ties go to the lower true-plane id; a plane whose members cover no
    ground-truth points maps to None. The mapping only depends on point
    memberships, never on plane ordering.
    """
    if not result.planes:
        raise ValueError("result contains no planes to match")
    mapping: list[int | None] = []
    for plane in result.planes:
        ids = gt.gt_plane_id[plane.point_indices]
        if ids.size == 0:
            mapping.append(None)
            continue
        counts = np.bincount(ids, minlength=gt.n_planes)
        mapping.append(int(counts.argmax()))
    return mapping


def directional_error(result: SegmentationResult, gt: GroundTruthScene) -> float:
    """Mean angular difference (degrees) between matched normal pairs.

    Sign-insensitive on both sides. Raises when nothing matched.
    """
    mapping = match_planes(result, gt)
    angles = []
    for plane, m in zip(result.planes, mapping):
        if m is None:
            continue
        c = abs(float(np.asarray(plane.normal) @ gt.gt_normals[m]))
        angles.append(math.degrees(math.acos(min(c, 1.0))))
    if not angles:
        raise PlanesegError("no segmented plane matched any ground-truth plane")
    return float(np.mean(angles))


def plane_count_ratio(result: SegmentationResult, gt: GroundTruthScene) -> float:
    """100 x segmented plane count / true plane count."""
    if gt.n_planes < 1:
        raise ValueError("ground truth has no planes")
    return 100.0 * len(result.planes) / gt.n_planes


def missing_ratio(result: SegmentationResult, gt: GroundTruthScene) -> float:
    """Percentage of points assigned to no plane."""
    n = len(result.assignment)
    if n == 0:
        raise ValueError("empty cloud")
    return 100.0 * float((result.assignment < 0).sum()) / n


def evaluate_scene(result: SegmentationResult, gt: GroundTruthScene) -> SceneEval:
    """All three metrics for one scene; alpha is nan when nothing matched."""
    try:
        alpha = directional_error(result, gt) if result.planes else float("nan")
    except PlanesegError:
        alpha = float("nan")
    return SceneEval(
        name=str(gt.spec.get("name", "scene")),
        alpha_deg=alpha,
        r_p_percent=plane_count_ratio(result, gt),
        r_m_percent=missing_ratio(result, gt),
        n_segmented=len(result.planes),
        n_gt=gt.n_planes,
    )


def aggregate_report(
    scene_evals: list[SceneEval],
    timings: list[StageTimings] | None = None,
) -> EvalReport:
    """Average per-scene metrics (and optionally timings) into one report."""
    if not scene_evals:
        raise ValueError("no scenes to aggregate")
    alphas = [s.alpha_deg for s in scene_evals if not math.isnan(s.alpha_deg)]
    alpha = float(np.mean(alphas)) if alphas else float("nan")
    r_p = float(np.mean([s.r_p_percent for s in scene_evals]))
    r_m = float(np.mean([s.r_m_percent for s in scene_evals]))
    agg_t = None
    fps = float("nan")
    if timings:
        agg_t = StageTimings(
            t_d=float(np.mean([t.t_d for t in timings])),
            t_c=float(np.mean([t.t_c for t in timings])),
            t_b=float(np.mean([t.t_b for t in timings])),
            t_s=float(np.mean([t.t_s for t in timings])),
        )
        fps = agg_t.fps
    return EvalReport(
        alpha_deg=alpha,
        r_p_percent=r_p,
        r_m_percent=r_m,
        per_scene=list(scene_evals),
        timings_ms=agg_t,
        fps=fps,
    )


def format_report(report: EvalReport, title: str = "evaluation") -> str:
    """Render a report as the three-row metric table."""
    lines = [
        f"== {title} ({len(report.per_scene)} scenes) ==",
        f"  alpha (deg)  {report.alpha_deg:8.3f}",
        f"  r_p   (%)    {report.r_p_percent:8.2f}",
        f"  r_m   (%)    {report.r_m_percent:8.3f}",
    ]
    if report.timings_ms is not None:
        t = report.timings_ms
        lines.append(
            f"  timings (ms) t_d={t.t_d:.2f} t_c={t.t_c:.2f} "
            f"t_b={t.t_b:.2f} t_s={t.t_s:.2f} ({report.fps:.1f} FPS)"
        )
    return "\n".join(lines)
