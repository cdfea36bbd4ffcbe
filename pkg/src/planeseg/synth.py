"""Synthetic scenes (staircases, boxes, planes) with exact ground truth.

Every generator returns a GroundTruthScene: uniformly surface-sampled
points, their true plane membership and normals, true H/V labels, and each
point's distance to its rectangle border (used to mask off edge effects in
evaluations). Generation is deterministic per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from planeseg.core import Category, CloudFormatError, LabeledCloud
from planeseg.io import (
    furthest_point_sample_indices,
    read_cloud,
    voxel_downsample,
    write_cloud,
)

__all__ = [
    "GroundTruthScene",
    "add_noise",
    "augment",
    "gen_box",
    "gen_eval_suite",
    "gen_plane",
    "gen_staircase",
    "load_scene",
    "sample_scene",
    "voxel_scene",
    "write_scene",
]


@dataclass(frozen=True)
class GroundTruthScene:
    """A synthetic cloud with per-point plane membership ground truth.

    Attributes:
        cloud: points labeled with their true H/V categories.
        gt_plane_id: (n,) int32 ground-truth plane id per point.
        gt_normals: (k, 3) unit normal per ground-truth plane.
        gt_plane_points: (k, 3) one anchor point on each plane.
        spec: the generating parameters, for provenance.
        edge_margin: (n,) distance from each point to its rectangle border
            (pre-noise), or None for scenes loaded from disk.
    """

    cloud: LabeledCloud
    gt_plane_id: np.ndarray
    gt_normals: np.ndarray
    gt_plane_points: np.ndarray
    spec: dict
    edge_margin: np.ndarray | None = None

    def __post_init__(self) -> None:
        ids = np.asarray(self.gt_plane_id, dtype=np.int32)
        if ids.shape != (len(self.cloud),):
            raise ValueError("gt_plane_id length must match the cloud")
        if ids.size and (ids.min() < 0 or ids.max() >= len(self.gt_normals)):
            raise ValueError("gt_plane_id indexes outside gt_normals")
        object.__setattr__(self, "gt_plane_id", ids)

    @property
    def n_planes(self) -> int:
        return len(self.gt_normals)

    def plane_residuals(self) -> np.ndarray:
        """Distance of every point to its own ground-truth plane."""
        n = self.gt_normals[self.gt_plane_id]
        anchor = self.gt_plane_points[self.gt_plane_id]
        return np.abs(((self.cloud.points - anchor) * n).sum(axis=1))


class _SceneBuilder:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.points: list[np.ndarray] = []
        self.labels: list[np.ndarray] = []
        self.ids: list[np.ndarray] = []
        self.margins: list[np.ndarray] = []
        self.normals: list[np.ndarray] = []
        self.anchors: list[np.ndarray] = []

    def add_rect(
        self,
        origin: np.ndarray,
        u_axis: np.ndarray,
        v_axis: np.ndarray,
        u_len: float,
        v_len: float,
        normal: np.ndarray,
        label: Category,
        density: float,
    ) -> None:
        count = max(3, int(round(density * u_len * v_len)))
        u = self.rng.uniform(0.0, u_len, count)
        v = self.rng.uniform(0.0, v_len, count)
        pts = origin + u[:, None] * u_axis + v[:, None] * v_axis
        margin = np.minimum(np.minimum(u, u_len - u), np.minimum(v, v_len - v))
        pid = len(self.normals)
        self.points.append(pts)
        self.labels.append(np.full(count, int(label), dtype=np.uint8))
        self.ids.append(np.full(count, pid, dtype=np.int32))
        self.margins.append(margin)
        self.normals.append(np.asarray(normal, dtype=np.float64))
        self.anchors.append(np.asarray(origin, dtype=np.float64))

    def build(self, spec: dict) -> GroundTruthScene:
        return GroundTruthScene(
            cloud=LabeledCloud(np.vstack(self.points), np.concatenate(self.labels)),
            gt_plane_id=np.concatenate(self.ids),
            gt_normals=np.vstack(self.normals),
            gt_plane_points=np.vstack(self.anchors),
            spec=spec,
            edge_margin=np.concatenate(self.margins),
        )


_EX = np.array([1.0, 0.0, 0.0])
_EY = np.array([0.0, 1.0, 0.0])
_EZ = np.array([0.0, 0.0, 1.0])


def gen_staircase(
    steps: int,
    length: float,
    width: float,
    height: float,
    density: float = 10_000.0,
    seed: int = 0,
) -> GroundTruthScene:
    """Generate a closed staircase ascending along +x.

    Step i contributes a riser (vertical, at x = i*length) and a tread
    (horizontal, at z = (i+1)*height), giving 2*steps ground-truth planes
    with ids ordered riser 0, tread 0, riser 1, ...

    Raises:
        ValueError: on nonpositive dimensions or step count.
    """
    if steps < 1 or length <= 0 or width <= 0 or height <= 0 or density <= 0:
        raise ValueError("staircase parameters must be positive")
    b = _SceneBuilder(np.random.default_rng(seed))
    for i in range(steps):
        b.add_rect(
            origin=np.array([i * length, 0.0, i * height]),
            u_axis=_EY,
            v_axis=_EZ,
            u_len=width,
            v_len=height,
            normal=-_EX,
            label=Category.V,
            density=density,
        )
        b.add_rect(
            origin=np.array([i * length, 0.0, (i + 1) * height]),
            u_axis=_EX,
            v_axis=_EY,
            u_len=length,
            v_len=width,
            normal=_EZ,
            label=Category.H,
            density=density,
        )
    return b.build(
        {
            "shape": "staircase",
            "steps": steps,
            "length": length,
            "width": width,
            "height": height,
            "density": density,
            "seed": seed,
        }
    )


def gen_box(
    length: float,
    width: float,
    height: float,
    density: float = 10_000.0,
    seed: int = 0,
) -> GroundTruthScene:
    """Generate a box resting on the ground: top face plus 4 sides, no bottom."""
    if length <= 0 or width <= 0 or height <= 0 or density <= 0:
        raise ValueError("box dimensions must be positive")
    b = _SceneBuilder(np.random.default_rng(seed))
    b.add_rect(np.array([0.0, 0.0, height]), _EX, _EY, length, width, _EZ, Category.H, density)
    b.add_rect(np.array([0.0, 0.0, 0.0]), _EY, _EZ, width, height, -_EX, Category.V, density)
    b.add_rect(np.array([length, 0.0, 0.0]), _EY, _EZ, width, height, _EX, Category.V, density)
    b.add_rect(np.array([0.0, 0.0, 0.0]), _EX, _EZ, length, height, -_EY, Category.V, density)
    b.add_rect(np.array([0.0, width, 0.0]), _EX, _EZ, length, height, _EY, Category.V, density)
    return b.build(
        {
            "shape": "box",
            "length": length,
            "width": width,
            "height": height,
            "density": density,
            "seed": seed,
        }
    )


def gen_plane(
    length: float,
    width: float,
    nz: float,
    density: float = 10_000.0,
    seed: int = 0,
) -> GroundTruthScene:
    """Generate a single rectangle whose unit normal has z-component ``nz``.

    The normal's azimuth is drawn from the seed. The true label is H when
    the normal is within 45 degrees (inclusive) of +z.
    """
    if not -1.0 <= nz <= 1.0:
        raise ValueError(f"nz must lie in [-1, 1], got {nz!r}")
    if length <= 0 or width <= 0 or density <= 0:
        raise ValueError("plane dimensions must be positive")
    rng = np.random.default_rng(seed)
    s = math.sqrt(max(0.0, 1.0 - nz * nz))
    phi = rng.uniform(0.0, 2.0 * math.pi)
    normal = np.array([s * math.cos(phi), s * math.sin(phi), nz])
    if s < 1e-12:
        u_axis = _EX.copy()
    else:
        u_axis = np.cross(normal, _EZ)
        u_axis /= np.linalg.norm(u_axis)
    v_axis = np.cross(normal, u_axis)
    label = Category.H if abs(nz) >= math.cos(math.pi / 4.0) else Category.V

    b = _SceneBuilder(rng)
    b.add_rect(
        origin=-(length / 2.0) * u_axis - (width / 2.0) * v_axis,
        u_axis=u_axis,
        v_axis=v_axis,
        u_len=length,
        v_len=width,
        normal=normal,
        label=label,
        density=density,
    )
    return b.build(
        {
            "shape": "plane",
            "length": length,
            "width": width,
            "nz": nz,
            "density": density,
            "seed": seed,
        }
    )


def add_noise(scene: GroundTruthScene, sigma: float, seed: int = 0) -> GroundTruthScene:
    """Perturb every coordinate with isotropic Gaussian noise of sd ``sigma`` meters.

    Ground-truth ids, normals and labels are unchanged.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma!r}")
    if sigma == 0:
        return scene
    rng = np.random.default_rng(seed)
    pts = scene.cloud.points + rng.normal(0.0, sigma, scene.cloud.points.shape)
    return replace(scene, cloud=LabeledCloud(pts, scene.cloud.labels))


def augment(
    scene: GroundTruthScene,
    ops: tuple[str, ...] = ("jitter", "rotate_z", "drop_clusters"),
    seed: int = 0,
    jitter_amp: float = 0.01,
    drop_k: int = 3,
    drop_radius: float = 0.05,
) -> GroundTruthScene:
    """Apply training-style augmentations in the given order.

    Supported ops: "jitter" (uniform per-coordinate disturbance within
    +/- jitter_amp), "rotate_z" (random rotation about +z applied to points
    and ground-truth normals), "drop_clusters" (remove all points within
    drop_k random balls of radius drop_radius).
    """
    rng = np.random.default_rng(seed)
    pts = scene.cloud.points.copy()
    labels = scene.cloud.labels
    ids = scene.gt_plane_id
    margins = scene.edge_margin
    normals = scene.gt_normals.copy()
    anchors = scene.gt_plane_points.copy()
    for op in ops:
        if op == "jitter":
            pts = pts + rng.uniform(-jitter_amp, jitter_amp, pts.shape)
        elif op == "rotate_z":
            a = rng.uniform(0.0, 2.0 * math.pi)
            c, s = math.cos(a), math.sin(a)
            rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
            pts = pts @ rot.T
            normals = normals @ rot.T
            anchors = anchors @ rot.T
        elif op == "drop_clusters":
            for _ in range(drop_k):
                if len(pts) == 0:
                    break
                center = pts[rng.integers(0, len(pts))]
                keep = ((pts - center) ** 2).sum(axis=1) > drop_radius**2
                pts = pts[keep]
                ids = ids[keep]
                if labels is not None:
                    labels = labels[keep]
                if margins is not None:
                    margins = margins[keep]
        else:
            raise ValueError(f"unknown augmentation op {op!r}")
    return replace(
        scene,
        cloud=LabeledCloud(pts, labels),
        gt_plane_id=ids,
        gt_normals=normals,
        gt_plane_points=anchors,
        edge_margin=margins,
    )


def rotate_scene_z(scene: GroundTruthScene, angle: float) -> GroundTruthScene:
    """Rotate a scene by a fixed angle about +z (points, normals, anchors)."""
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return replace(
        scene,
        cloud=LabeledCloud(scene.cloud.points @ rot.T, scene.cloud.labels),
        gt_normals=scene.gt_normals @ rot.T,
        gt_plane_points=scene.gt_plane_points @ rot.T,
    )


def gen_eval_suite(
    n_scenes: int,
    seed: int = 0,
    raw_points: int = 32768,
) -> list[GroundTruthScene]:
    """Generate the staircase evaluation suite.

    Each scene draws 2-6 steps with lengths in [0.2, 0.4] m, widths in
    [0.3, 1.5] m, and heights in [0.1, 0.3] m. The sampling density is set
    per scene so the raw cloud holds about ``raw_points`` points, which
    keeps downstream subsampling meaningful for every stair size.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be at least 1")
    rng = np.random.default_rng(seed)
    scenes = []
    for i in range(n_scenes):
        steps = int(rng.integers(2, 7))
        length = float(rng.uniform(0.2, 0.4))
        width = float(rng.uniform(0.3, 1.5))
        height = float(rng.uniform(0.1, 0.3))
        area = steps * width * (length + height)
        density = raw_points / area
        scene_seed = int(rng.integers(0, 2**31 - 1))
        scene = gen_staircase(steps, length, width, height, density, scene_seed)
        scenes.append(replace(scene, spec={**scene.spec, "name": f"stair_{i:03d}"}))
    return scenes


def sample_scene(scene: GroundTruthScene, n: int, seed: int = 0) -> GroundTruthScene:
    """Subsample a scene with furthest-point sampling, keeping ground truth aligned."""
    idx = furthest_point_sample_indices(scene.cloud, n, seed)
    labels = scene.cloud.labels[idx] if scene.cloud.labels is not None else None
    return replace(
        scene,
        cloud=LabeledCloud(scene.cloud.points[idx], labels),
        gt_plane_id=scene.gt_plane_id[idx],
        edge_margin=scene.edge_margin[idx] if scene.edge_margin is not None else None,
    )


def voxel_scene(scene: GroundTruthScene, voxel: float) -> GroundTruthScene:
    """Voxel-downsample a scene; each voxel's ground truth is its majority id.

    The output cloud is identical to ``voxel_downsample(scene.cloud, voxel)``
    so pipeline results stay aligned with the remapped ground truth.
    """
    cloud_v = voxel_downsample(scene.cloud, voxel)
    keys = np.floor(scene.cloud.points / voxel).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    n_vox = inverse.max() + 1
    k = scene.n_planes
    counts = np.bincount(inverse * k + scene.gt_plane_id, minlength=n_vox * k)
    gt_ids = counts.reshape(n_vox, k).argmax(axis=1).astype(np.int32)
    margins = None
    if scene.edge_margin is not None:
        margins = np.full(n_vox, np.inf)
        np.minimum.at(margins, inverse, scene.edge_margin)
    return replace(
        scene,
        cloud=cloud_v,
        gt_plane_id=gt_ids,
        edge_margin=margins,
    )


def write_scene(scene: GroundTruthScene, ply_path: str | Path, gt_path: str | Path) -> None:
    """Write the scene cloud (with labels) plus the ground-truth sidecar."""
    write_cloud(scene.cloud, ply_path, format="ply_binary_le")
    with open(gt_path, "w") as fh:
        fh.write("# planeseg ground truth v1\n")
        fh.write(f"planes {scene.n_planes}\n")
        for i in range(scene.n_planes):
            n = scene.gt_normals[i]
            p = scene.gt_plane_points[i]
            fh.write(
                f"plane {i} {n[0]!r} {n[1]!r} {n[2]!r} {p[0]!r} {p[1]!r} {p[2]!r}\n"
            )
        fh.write(f"points {len(scene.cloud)}\n")
        fh.write("\n".join(str(int(v)) for v in scene.gt_plane_id))
        fh.write("\n")


def load_scene(ply_path: str | Path, gt_path: str | Path) -> GroundTruthScene:
    """Load a scene written by :func:`write_scene`."""
    cloud = read_cloud(ply_path)
    lines = Path(gt_path).read_text().splitlines()
    it = iter(
        (i + 1, ln.strip()) for i, ln in enumerate(lines) if ln.strip() and not ln.startswith("#")
    )
    try:
        lineno, head = next(it)
        if not head.startswith("planes "):
            raise CloudFormatError(f"{gt_path}:{lineno}: expected 'planes <k>'")
        k = int(head.split()[1])
        normals = np.zeros((k, 3))
        anchors = np.zeros((k, 3))
        for _ in range(k):
            lineno, ln = next(it)
            parts = ln.split()
            if parts[0] != "plane" or len(parts) != 8:
                raise CloudFormatError(f"{gt_path}:{lineno}: bad plane row {ln!r}")
            i = int(parts[1])
            normals[i] = [float(v) for v in parts[2:5]]
            anchors[i] = [float(v) for v in parts[5:8]]
        lineno, head = next(it)
        if not head.startswith("points "):
            raise CloudFormatError(f"{gt_path}:{lineno}: expected 'points <n>'")
        n = int(head.split()[1])
        ids = np.empty(n, dtype=np.int32)
        for j in range(n):
            lineno, ln = next(it)
            ids[j] = int(ln)
    except StopIteration as exc:
        raise CloudFormatError(f"{gt_path}: truncated ground-truth file") from exc
    if n != len(cloud):
        raise CloudFormatError(
            f"{gt_path}: {n} ground-truth ids for {len(cloud)} points in {ply_path}"
        )
    return GroundTruthScene(
        cloud=cloud,
        gt_plane_id=ids,
        gt_normals=normals,
        gt_plane_points=anchors,
        spec={"shape": "loaded", "ply": str(ply_path)},
        edge_margin=None,
    )
