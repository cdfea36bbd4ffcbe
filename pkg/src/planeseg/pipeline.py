"""End-to-end composition: sampling, classification, segmentation, benchmarking."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from planeseg.classify import classify_cloud, inject_labels
from planeseg.core import LabeledCloud, SegmenterConfig
from planeseg.io import furthest_point_sample, voxel_downsample
from planeseg.metrics import EvalReport, aggregate_report, evaluate_scene
from planeseg.ransac import RansacConfig, ransac_segment
from planeseg.segmenter import SegmentationResult, StageTimings, fit_plane_pca, segment
from planeseg.synth import GroundTruthScene, sample_scene, voxel_scene

__all__ = ["BenchRecord", "result_from_assignment", "run_bench", "run_pipeline"]


def run_pipeline(
    cloud: LabeledCloud,
    cfg: SegmenterConfig,
    labels: str | np.ndarray = "geometric",
    sampler: str | None = None,
    n_points: int | None = None,
    seed: int = 0,
    origin: np.ndarray | None = None,
    record_verdicts: bool = False,
) -> tuple[SegmentationResult, LabeledCloud]:
    """Run downsampling, labeling, and segmentation with stage timings.

    Args:
        cloud: input cloud.
        cfg: segmenter configuration.
        labels: "geometric" to classify from estimated normals, "keep" to
            use the labels already on the cloud, or an explicit label array
            to inject.
        sampler: None, "voxel" (cfg.voxel_size) or "fps" (requires n_points).
        origin: optional octree origin override.

    Returns:
        (result, working_cloud) where working_cloud is the possibly
        downsampled, labeled cloud the segmentation actually ran on.
    """
    t0 = time.perf_counter()
    if sampler == "voxel":
        cloud = voxel_downsample(cloud, cfg.voxel_size)
    elif sampler == "fps":
        if n_points is None:
            raise ValueError("fps sampling requires n_points")
        cloud = furthest_point_sample(cloud, n_points, seed)
    elif sampler is not None:
        raise ValueError(f"unknown sampler {sampler!r}")
    t_d = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    if isinstance(labels, str):
        if labels == "geometric":
            cloud = classify_cloud(cloud, cfg)
        elif labels == "keep":
            if cloud.labels is None:
                raise ValueError("labels='keep' but the cloud has no labels")
        else:
            raise ValueError(f"unknown labels mode {labels!r}")
    else:
        cloud = inject_labels(cloud, labels)
    t_c = (time.perf_counter() - t0) * 1000.0

    result = segment(cloud, cfg, origin=origin, record_verdicts=record_verdicts)
    result.timings.t_d = t_d
    result.timings.t_c = t_c
    return result, cloud


@dataclass(frozen=True)
class BenchRecord:
    """Per-scene benchmark row: sizes plus per-stage medians in milliseconds."""

    name: str
    n_raw: int
    n_down: int
    t_d: float
    t_c: float
    t_b: float
    t_s: float

    @property
    def total_ms(self) -> float:
        return self.t_d + self.t_c + self.t_b + self.t_s

    @property
    def fps(self) -> float:
        total = self.total_ms
        return 1000.0 / total if total > 0 else float("inf")


def _run_scene(
    scene: GroundTruthScene,
    cfg: SegmenterConfig,
    method: str,
    ransac_cfg: RansacConfig,
    sampler: str | None,
) -> tuple[SegmentationResult, LabeledCloud]:
    if method == "ours":
        return run_pipeline(scene.cloud, cfg, labels="geometric", sampler=sampler)
    if method == "ransac":
        result = ransac_segment(scene.cloud, ransac_cfg)
        return result, scene.cloud
    raise ValueError(f"unknown method {method!r}")


def run_bench(
    scenes: list[GroundTruthScene],
    cfg: SegmenterConfig,
    method: str = "ours",
    runs: int = 5,
    ransac_cfg: RansacConfig | None = None,
    sampler: str | None = None,
    n_points: int | None = None,
    seed: int = 0,
) -> tuple[list[BenchRecord], EvalReport]:
    """Benchmark a suite of scenes and evaluate the (deterministic) results.

    Each scene is processed ``runs`` times after one discarded warm-up run;
    per-stage times are medians across the kept runs. Scenes run
    sequentially so timing is free of contention. ``sampler="fps"`` (with
    ``n_points``) subsamples scenes up front; ``sampler="voxel"`` times the
    voxel pass inside the pipeline and evaluates against voxel-majority
    ground truth.

    Raises:
        ValueError: on an empty suite.
    """
    if not scenes:
        raise ValueError("benchmark suite is empty")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    ransac_cfg = ransac_cfg or RansacConfig()

    pipe_sampler = None
    if sampler == "fps":
        if n_points is None:
            raise ValueError("fps sampling requires n_points")
        scenes = [sample_scene(s, n_points, seed) for s in scenes]
    elif sampler == "voxel":
        pipe_sampler = "voxel"
    elif sampler is not None:
        raise ValueError(f"unknown sampler {sampler!r}")

    records: list[BenchRecord] = []
    evals = []
    timings: list[StageTimings] = []
    for i, scene in enumerate(scenes):
        gt_scene = voxel_scene(scene, cfg.voxel_size) if pipe_sampler == "voxel" else scene
        stage_samples: list[StageTimings] = []
        result = working = None
        for r in range(runs + 1):
            result, working = _run_scene(scene, cfg, method, ransac_cfg, pipe_sampler)
            if r > 0:  # drop the warm-up run
                stage_samples.append(result.timings)
        med = StageTimings(
            t_d=statistics.median(t.t_d for t in stage_samples),
            t_c=statistics.median(t.t_c for t in stage_samples),
            t_b=statistics.median(t.t_b for t in stage_samples),
            t_s=statistics.median(t.t_s for t in stage_samples),
        )
        timings.append(med)
        name = str(scene.spec.get("name", f"scene_{i:03d}"))
        records.append(
            BenchRecord(
                name=name,
                n_raw=len(scene.cloud),
                n_down=len(working),
                t_d=med.t_d,
                t_c=med.t_c,
                t_b=med.t_b,
                t_s=med.t_s,
            )
        )
        evals.append(evaluate_scene(result, gt_scene))
    report = aggregate_report(evals, timings)
    return records, report


def format_bench_table(records: list[BenchRecord]) -> str:
    """Render benchmark rows as a fixed-width table."""
    header = (
        f"{'scene':<14} {'N_m':>8} {'N_d':>8} {'t_d':>8} {'t_c':>8} "
        f"{'t_b':>8} {'t_s':>8} {'FPS':>8}"
    )
    lines = [header, "-" * len(header)]
    for r in records:
        lines.append(
            f"{r.name:<14} {r.n_raw:>8d} {r.n_down:>8d} {r.t_d:>8.2f} {r.t_c:>8.2f} "
            f"{r.t_b:>8.2f} {r.t_s:>8.2f} {r.fps:>8.1f}"
        )
    return "\n".join(lines)


def result_from_assignment(cloud: LabeledCloud, assignment: np.ndarray) -> SegmentationResult:
    """Rebuild a SegmentationResult from a per-point plane-id array.

    Plane parameters are refit by PCA over each id's members; ids whose
    groups are too small or degenerate to fit are dropped (their points
    become unassigned) and the remaining ids are compacted.
    """
    assignment = np.asarray(assignment, dtype=np.int32)
    if assignment.shape != (len(cloud),):
        raise ValueError("assignment length must match the cloud")
    planes = []
    out = np.full(len(cloud), -1, dtype=np.int32)
    for pid in np.unique(assignment[assignment >= 0]):
        idx = np.flatnonzero(assignment == pid)
        if len(idx) < 3:
            continue
        try:
            plane = fit_plane_pca(cloud.points[idx], idx)
        except Exception:
            continue
        out[idx] = len(planes)
        planes.append(plane)
    return SegmentationResult(
        planes=planes,
        residual_indices=np.flatnonzero(out < 0).astype(np.int64),
        assignment=out,
        timings=StageTimings(),
    )


def bench_records_csv(records: list[BenchRecord]) -> str:
    lines = ["scene,n_raw,n_down,t_d_ms,t_c_ms,t_b_ms,t_s_ms,fps"]
    for r in records:
        lines.append(
            f"{r.name},{r.n_raw},{r.n_down},{r.t_d:.4f},{r.t_c:.4f},"
            f"{r.t_b:.4f},{r.t_s:.4f},{r.fps:.2f}"
        )
    return "\n".join(lines) + "\n"
