"""Command-line interface: classify, segment, synth, eval, bench."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from planeseg import synth
from planeseg.classify import classify_cloud
from planeseg.core import (
    Category,
    PlanesegError,
    SegmenterConfig,
    default_config,
    load_config,
    validate_config,
)
from planeseg.io import read_cloud, read_segmented, write_cloud
from planeseg.metrics import aggregate_report, evaluate_scene, format_report
from planeseg.octree import dump_octree
from planeseg.pipeline import (
    bench_records_csv,
    format_bench_table,
    result_from_assignment,
    run_bench,
    run_pipeline,
)
from planeseg.ransac import RansacConfig


def _parse_vec3(text: str) -> np.ndarray:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected 3 comma-separated numbers, got {text!r}")
    return np.array([float(p) for p in parts])


def _load_cfg(args) -> SegmenterConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else default_config()
    return validate_config(cfg)


def _cmd_classify(args) -> int:
    cfg = _load_cfg(args)
    if args.k:
        cfg = replace(cfg, classify_k=args.k)
    if args.gravity is not None:
        cfg = replace(cfg, gravity=tuple(args.gravity))
    validate_config(cfg)
    cloud = read_cloud(args.input)
    labeled = classify_cloud(cloud, cfg)
    write_cloud(labeled, args.output, format=args.format)
    n_h = int((labeled.labels == Category.H).sum())
    print(f"classified {len(labeled)} points: {n_h} H, {len(labeled) - n_h} V -> {args.output}")
    return 0


def _load_labels(spec: str, cloud) -> np.ndarray:
    path = Path(spec)
    if path.suffix.lower() == ".ply":
        labeled = read_cloud(path)
        if labeled.labels is None:
            raise PlanesegError(f"{path} carries no category property")
        return np.asarray(labeled.labels)
    values = [int(v) for v in path.read_text().split()]
    return np.asarray(values, dtype=np.uint8)


def _cmd_segment(args) -> int:
    cfg = _load_cfg(args)
    cloud = read_cloud(args.input)
    origin = args.origin if args.origin is not None else None

    if args.method == "ransac":
        from planeseg.ransac import ransac_segment

        rcfg = RansacConfig(theta_pf=args.theta_pf, seed=args.seed)
        result = ransac_segment(cloud, rcfg)
        working = cloud
    else:
        labels: str | np.ndarray
        if args.labels == "geometric":
            labels = "geometric"
        elif args.labels == "keep":
            labels = "keep"
        elif args.labels.startswith("file:"):
            labels = _load_labels(args.labels[5:], cloud)
        else:
            raise PlanesegError(f"unknown --labels mode {args.labels!r}")
        result, working = run_pipeline(
            cloud, cfg, labels=labels, sampler=args.sampler, seed=args.seed, origin=origin
        )

    write_cloud(working, args.output, format=args.format, assignment=result.assignment)
    if args.dump_octree and result.tree is not None:
        dump_octree(result.tree, args.dump_octree)
    n_assigned = int((result.assignment >= 0).sum())
    print(
        f"{len(result.planes)} planes, {n_assigned}/{len(working)} points assigned "
        f"-> {args.output}"
    )
    if args.timings:
        t = result.timings
        print(
            f"timings (ms): t_d={t.t_d:.2f} t_c={t.t_c:.2f} t_b={t.t_b:.2f} "
            f"t_s={t.t_s:.2f} total={t.total_ms:.2f} ({t.fps:.1f} FPS)"
        )
    return 0


def _cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.suite:
        scenes = synth.gen_eval_suite(args.suite, seed=args.seed)
    elif args.shape == "staircase":
        scenes = [
            synth.gen_staircase(
                args.steps, args.length, args.width, args.height, args.density, args.seed
            )
        ]
    elif args.shape == "box":
        scenes = [synth.gen_box(args.length, args.width, args.height, args.density, args.seed)]
    else:
        scenes = [synth.gen_plane(args.length, args.width, args.nz, args.density, args.seed)]

    for i, scene in enumerate(scenes):
        if args.noise_cm > 0:
            scene = synth.add_noise(scene, args.noise_cm / 100.0, seed=args.seed + i)
        if args.points:
            scene = synth.sample_scene(scene, args.points, seed=args.seed + i)
        name = scene.spec.get("name", f"scene_{i:03d}")
        synth.write_scene(scene, out / f"{name}.ply", out / f"{name}.gt.txt")
    print(f"wrote {len(scenes)} scene(s) to {out}")
    return 0


def _scene_pairs(directory: Path) -> list[tuple[Path, Path]]:
    pairs = []
    for ply in sorted(directory.glob("*.ply")):
        if ply.name.endswith(".seg.ply"):
            continue
        gt = ply.with_suffix("").with_suffix("")  # strip .ply
        gt = ply.parent / (ply.stem + ".gt.txt")
        if gt.exists():
            pairs.append((ply, gt))
    return pairs


def _cmd_eval(args) -> int:
    evals = []
    failures = []
    if args.dir:
        directory = Path(args.dir)
        jobs = []
        for ply, gt in _scene_pairs(directory):
            seg = ply.parent / (ply.stem + ".seg.ply")
            if seg.exists():
                jobs.append((seg, ply, gt))
        if not jobs:
            print(f"no *.seg.ply results found in {directory}", file=sys.stderr)
            return 1
    else:
        if not (args.input and args.gt):
            print("eval requires --input and --gt (or --dir)", file=sys.stderr)
            return 2
        jobs = [(Path(args.input), None, Path(args.gt))]

    for seg_path, scene_ply, gt_path in jobs:
        try:
            seg_cloud, assignment = read_segmented(seg_path)
            if assignment is None:
                raise PlanesegError(f"{seg_path} carries no plane_id property")
            scene = synth.load_scene(scene_ply or seg_path, gt_path)
            if len(scene.cloud) != len(seg_cloud):
                raise PlanesegError(
                    f"{seg_path}: {len(seg_cloud)} points vs {len(scene.cloud)} in ground truth"
                )
            result = result_from_assignment(seg_cloud, assignment)
            evals.append(evaluate_scene(result, scene))
        except (PlanesegError, ValueError, OSError) as exc:
            failures.append(f"{seg_path}: {exc}")

    if evals:
        report = aggregate_report(evals)
        print(format_report(report, title=args.dir or str(args.input)))
        if args.csv:
            lines = ["scene,alpha_deg,r_p_percent,r_m_percent,n_segmented,n_gt"]
            for s in report.per_scene:
                lines.append(
                    f"{s.name},{s.alpha_deg:.4f},{s.r_p_percent:.2f},"
                    f"{s.r_m_percent:.4f},{s.n_segmented},{s.n_gt}"
                )
            Path(args.csv).write_text("\n".join(lines) + "\n")
    if failures:
        print("failed scenes:", file=sys.stderr)
        for f in failures:
            print(f"  {f}", file=sys.stderr)
        return 1
    return 0


def _cmd_bench(args) -> int:
    cfg = _load_cfg(args)
    directory = Path(args.dir)
    pairs = _scene_pairs(directory)
    if not pairs:
        print(f"no scene pairs (*.ply + *.gt.txt) in {directory}", file=sys.stderr)
        return 1
    scenes = []
    failures = []
    for ply, gt in pairs:
        try:
            scenes.append(synth.load_scene(ply, gt))
        except (PlanesegError, ValueError, OSError) as exc:
            failures.append(f"{ply}: {exc}")
    if not scenes:
        print("no readable scenes", file=sys.stderr)
        return 1

    rcfg = RansacConfig(theta_pf=args.theta_pf, seed=args.seed)
    records, report = run_bench(
        scenes,
        cfg,
        method=args.method,
        runs=args.runs,
        ransac_cfg=rcfg,
        sampler=args.sampler,
        n_points=args.points,
        seed=args.seed,
    )
    print(format_bench_table(records))
    print(format_report(report, title=f"{args.method} on {directory}"))
    if args.csv:
        Path(args.csv).write_text(bench_records_csv(records))
    if failures:
        print("failed scenes:", file=sys.stderr)
        for f in failures:
            print(f"  {f}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="planeseg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("classify", help="label points H/V from estimated normals")
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    c.add_argument("--config")
    c.add_argument("--k", type=int, default=0, help="neighborhood size override")
    c.add_argument("--gravity", type=_parse_vec3, help="gx,gy,gz unit baseline")
    c.add_argument("--format", default="ply_binary_le",
                   choices=["ply_ascii", "ply_binary_le"])
    c.set_defaults(func=_cmd_classify)

    s = sub.add_parser("segment", help="extract planes from a cloud")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--config")
    s.add_argument("--labels", default="geometric",
                   help="geometric | keep | file:<path> (ply or 0/1 text)")
    s.add_argument("--method", default="ours", choices=["ours", "ransac"])
    s.add_argument("--theta-pf", type=float, default=0.01, dest="theta_pf",
                   help="RANSAC inlier distance, m")
    s.add_argument("--sampler", choices=["voxel"], default=None,
                   help="optional voxel downsampling before labeling")
    s.add_argument("--origin", type=_parse_vec3, help="octree min corner x,y,z")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--timings", action="store_true")
    s.add_argument("--dump-octree", dest="dump_octree")
    s.add_argument("--format", default="ply_binary_le",
                   choices=["ply_ascii", "ply_binary_le"])
    s.set_defaults(func=_cmd_segment)

    y = sub.add_parser("synth", help="generate synthetic scenes with ground truth")
    y.add_argument("--out", required=True)
    y.add_argument("--suite", type=int, default=0,
                   help="generate N staircases with randomized dimensions")
    y.add_argument("--shape", default="staircase", choices=["staircase", "box", "plane"])
    y.add_argument("--steps", type=int, default=3)
    y.add_argument("--length", type=float, default=0.3)
    y.add_argument("--width", type=float, default=0.9)
    y.add_argument("--height", type=float, default=0.2)
    y.add_argument("--nz", type=float, default=1.0)
    y.add_argument("--density", type=float, default=10000.0, help="points per m^2")
    y.add_argument("--noise-cm", type=float, default=0.0, dest="noise_cm",
                   help="gaussian noise sd in centimeters")
    y.add_argument("--points", type=int, default=0,
                   help="furthest-point subsample to this count")
    y.add_argument("--seed", type=int, default=0)
    y.set_defaults(func=_cmd_synth)

    e = sub.add_parser("eval", help="score segmented clouds against ground truth")
    e.add_argument("--input", help="segmented ply (with plane_id)")
    e.add_argument("--gt", help="ground-truth sidecar")
    e.add_argument("--dir", help="directory of <name>.ply / <name>.gt.txt / <name>.seg.ply")
    e.add_argument("--csv")
    e.set_defaults(func=_cmd_eval)

    b = sub.add_parser("bench", help="time and score a scene directory")
    b.add_argument("--dir", required=True)
    b.add_argument("--config")
    b.add_argument("--method", default="ours", choices=["ours", "ransac"])
    b.add_argument("--runs", type=int, default=5)
    b.add_argument("--sampler", choices=["fps", "voxel"], default=None)
    b.add_argument("--points", type=int, default=None,
                   help="target count for --sampler fps")
    b.add_argument("--theta-pf", type=float, default=0.01, dest="theta_pf")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--csv")
    b.set_defaults(func=_cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PlanesegError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
