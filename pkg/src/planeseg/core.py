"""Core domain types shared across the plane segmentation pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from enum import IntEnum
from pathlib import Path

import numpy as np

__all__ = [
    "Category",
    "CloudFormatError",
    "ConfigError",
    "DegenerateGeometryError",
    "LabeledCloud",
    "Plane",
    "PlanesegError",
    "SegmenterConfig",
    "default_config",
    "load_config",
    "save_config",
    "validate_config",
]


class PlanesegError(Exception):
    """Base class for all errors raised by planeseg."""


class ConfigError(PlanesegError, ValueError):
    """A configuration field violates its allowed range."""


class CloudFormatError(PlanesegError, ValueError):
    """A point-cloud file could not be parsed."""


class DegenerateGeometryError(PlanesegError, ValueError):
    """A point set is too degenerate (rank < 2) to define a plane."""


class Category(IntEnum):
    """Pointwise surface inclination label.

    H marks horizontal-leaning points (local normal within 45 degrees of the
    gravity axis), V marks vertical-leaning ones. H sorts before V so that
    every tie in the pipeline resolves deterministically.
    """

    H = 0
    V = 1


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabeledCloud:
    """An unordered point cloud with optional per-point category labels.

    Attributes:
        points: (n, 3) float64 array of coordinates in meters. All entries
            are finite; non-finite input is rejected at construction.
        labels: optional (n,) uint8 array of Category values.
    """

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("points contain non-finite coordinates")
        object.__setattr__(self, "points", _readonly(pts))
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.uint8, copy=True)
            if lab.shape != (len(pts),):
                raise ValueError(
                    f"labels have shape {lab.shape}, expected ({len(pts)},)"
                )
            if lab.size and lab.max() > 1:
                raise ValueError("labels must contain only Category values 0 (H) or 1 (V)")
            object.__setattr__(self, "labels", _readonly(lab))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def with_labels(self, labels: np.ndarray) -> "LabeledCloud":
        """Return a copy of this cloud carrying the given labels."""
        return LabeledCloud(self.points, labels)


@dataclass(frozen=True)
class Plane:
    """A planar region: member points plus the statistics of their fit.

    Attributes:
        point_indices: sorted int64 indices into the source cloud.
        count: number of member points, equal to ``len(point_indices)``.
        centroid: (3,) mean position of the fitted member set, meters.
        normal: (3,) unit normal of the fitted plane.
        mse_normal: mean square error of the fitted members along the
            normal direction, m^2.
        second_moment: (3, 3) running sum of outer products of the fitted
            member coordinates, m^2. Together with ``count`` and
            ``centroid`` it reconstructs the scatter matrix in O(1), which
            is what makes cluster-level merging cheap.
    """

    point_indices: np.ndarray
    count: int
    centroid: np.ndarray
    normal: np.ndarray
    mse_normal: float
    second_moment: np.ndarray

    def __post_init__(self) -> None:
        idx = np.array(self.point_indices, dtype=np.int64, copy=True)
        idx = np.sort(idx)
        object.__setattr__(self, "point_indices", _readonly(idx))
        centroid = _readonly(np.array(self.centroid, dtype=np.float64, copy=True))
        normal = np.array(self.normal, dtype=np.float64, copy=True)
        sm = np.array(self.second_moment, dtype=np.float64, copy=True)
        if centroid.shape != (3,) or normal.shape != (3,):
            raise ValueError("centroid and normal must be 3-vectors")
        if sm.shape != (3, 3):
            raise ValueError("second_moment must be a 3x3 matrix")
        nrm = float(np.linalg.norm(normal))
        if abs(nrm - 1.0) > 1e-9:
            raise ValueError(f"normal must be unit length, got |n| = {nrm!r}")
        if self.count != len(idx) or self.count < 3:
            raise ValueError(
                f"count ({self.count}) must equal len(point_indices) ({len(idx)}) and be >= 3"
            )
        if np.abs(sm - sm.T).max() > 1e-12:
            raise ValueError("second_moment must be symmetric")
        if self.mse_normal < 0:
            raise ValueError("mse_normal must be nonnegative")
        object.__setattr__(self, "centroid", centroid)
        object.__setattr__(self, "normal", _readonly(normal))
        object.__setattr__(self, "second_moment", _readonly(sm))

    def validate(self) -> "Plane":
        """Run the expensive invariants (positive semi-definiteness)."""
        w = np.linalg.eigvalsh(np.asarray(self.second_moment))
        scale = max(abs(w[0]), abs(w[2]), 1.0)
        if w[0] < -1e-9 * scale:
            raise ValueError(f"second_moment is not PSD (min eigenvalue {w[0]!r})")
        return self

    def scatter_matrix(self) -> np.ndarray:
        """Centered scatter of the fitted member set, reconstructed in O(1)."""
        mu = np.asarray(self.centroid)
        return np.asarray(self.second_moment) - self.count * np.outer(mu, mu)


@dataclass(frozen=True)
class SegmenterConfig:
    """All thresholds and structural parameters of the segmenter.

    Units are SI throughout (meters, square meters). The defaults are the
    published operating point; see :func:`default_config`.
    """

    theta_n_out: int = 5          # max outlier count for a pure node
    theta_r_out: float = 0.05     # max outlier ratio for a pure node
    theta_n_in: int = 5           # min inlier count to fit a plane
    theta_e_n: float = 0.005      # max squared deviation mass along the normal, m^2
    theta_coplane: float = 0.85   # min |n1 . n2| to merge two planes
    residual_distance: float = 0.005  # point-to-plane attach threshold, m
    octree_extent: float = 3.2    # root cube edge, m
    octree_max_depth: int = 7
    voxel_size: float = 0.02      # downsampling voxel edge, m
    classify_k: int = 16          # neighborhood size for normal estimation
    gravity: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self) -> None:
        g = tuple(float(v) for v in self.gravity)
        if len(g) != 3:
            raise ConfigError(f"gravity must be a 3-vector, got {self.gravity!r}")
        object.__setattr__(self, "gravity", g)

    def gravity_vector(self) -> np.ndarray:
        return np.array(self.gravity, dtype=np.float64)


def default_config() -> SegmenterConfig:
    """Return the published default configuration."""
    return SegmenterConfig()


def validate_config(cfg: SegmenterConfig) -> SegmenterConfig:
    """Check every field invariant, raising ConfigError on the first violation.

    Returns the config unchanged so calls can be chained.
    """
    if not isinstance(cfg.theta_n_out, int) or cfg.theta_n_out < 0:
        raise ConfigError(f"theta_n_out must be a nonnegative integer, got {cfg.theta_n_out!r}")
    if not 0.0 <= cfg.theta_r_out <= 1.0:
        raise ConfigError(f"theta_r_out must lie in [0, 1], got {cfg.theta_r_out!r}")
    if not isinstance(cfg.theta_n_in, int) or cfg.theta_n_in < 1:
        raise ConfigError(f"theta_n_in must be a positive integer, got {cfg.theta_n_in!r}")
    if not cfg.theta_e_n > 0:
        raise ConfigError(f"theta_e_n must be positive, got {cfg.theta_e_n!r}")
    if not 0.0 < cfg.theta_coplane < 1.0:
        raise ConfigError(f"theta_coplane must lie in (0, 1), got {cfg.theta_coplane!r}")
    if not cfg.residual_distance > 0:
        raise ConfigError(f"residual_distance must be positive, got {cfg.residual_distance!r}")
    if not cfg.octree_extent > 0:
        raise ConfigError(f"octree_extent must be positive, got {cfg.octree_extent!r}")
    if not isinstance(cfg.octree_max_depth, int) or cfg.octree_max_depth < 1:
        raise ConfigError(
            f"octree_max_depth must be a positive integer, got {cfg.octree_max_depth!r}"
        )
    if not cfg.voxel_size > 0:
        raise ConfigError(f"voxel_size must be positive, got {cfg.voxel_size!r}")
    if not isinstance(cfg.classify_k, int) or cfg.classify_k < 1:
        raise ConfigError(f"classify_k must be a positive integer, got {cfg.classify_k!r}")
    g = cfg.gravity_vector()
    if not np.isfinite(g).all() or abs(float(np.linalg.norm(g)) - 1.0) > 1e-6:
        raise ConfigError(f"gravity must be a unit 3-vector, got {cfg.gravity!r}")
    return cfg


_INT_FIELDS = {"theta_n_out", "theta_n_in", "octree_max_depth", "classify_k"}


def config_to_text(cfg: SegmenterConfig) -> str:
    """Serialize a config to the flat ``key = value`` text format."""
    lines = ["# planeseg segmenter configuration (SI units)"]
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "gravity":
            text = ",".join(repr(v) for v in value)
        else:
            text = repr(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> SegmenterConfig:
    """Parse the ``key = value`` format produced by :func:`config_to_text`.

    Unknown keys are rejected; omitted keys keep their defaults. The result
    is validated before being returned.
    """
    known = {f.name for f in fields(SegmenterConfig)}
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key == "gravity":
                parts = [p for p in val.replace(",", " ").split() if p]
                values[key] = tuple(float(p) for p in parts)
            elif key in _INT_FIELDS:
                values[key] = int(val)
            else:
                values[key] = float(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {val!r}") from exc
    return validate_config(SegmenterConfig(**values))


def save_config(cfg: SegmenterConfig, path: str | Path) -> None:
    Path(path).write_text(config_to_text(cfg))


def load_config(path: str | Path) -> SegmenterConfig:
    return config_from_text(Path(path).read_text())


def unit_or_raise(v: np.ndarray, name: str, tol: float = 1e-6) -> np.ndarray:
    """Validate that ``v`` is a finite unit 3-vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
    n = float(np.linalg.norm(v))
    if not math.isfinite(n) or n == 0.0:
        raise ValueError(f"{name} has zero or non-finite length")
    if abs(n - 1.0) > tol:
        raise ValueError(f"{name} must be unit length within {tol}, got |v| = {n!r}")
    return v
