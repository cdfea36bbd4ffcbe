"""Point-cloud file I/O, depth back-projection, and downsampling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from planeseg.core import Category, CloudFormatError, LabeledCloud

__all__ = [
    "DepthFrame",
    "backproject",
    "furthest_point_sample",
    "furthest_point_sample_indices",
    "load_depth",
    "read_cloud",
    "read_segmented",
    "voxel_downsample",
    "write_cloud",
]

# RGB palette cycled by plane id when writing segmented clouds.
PALETTE = np.array(
    [
        (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
        (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
        (210, 245, 60), (250, 190, 190), (0, 128, 128), (170, 110, 40),
        (128, 0, 0), (128, 128, 0), (0, 0, 128), (255, 215, 180),
    ],
    dtype=np.uint8,
)
UNASSIGNED_COLOR = np.array((128, 128, 128), dtype=np.uint8)

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass(frozen=True)
class DepthFrame:
    """A depth image plus the pinhole intrinsics needed to back-project it.

    Attributes:
        width, height: image size in pixels.
        depth: (height, width) float64 array of range values in meters;
            0 marks an invalid measurement.
        fx, fy, cx, cy: pinhole intrinsics in pixels.
        max_range: measurements beyond this distance (meters) are discarded.
    """

    width: int
    height: int
    depth: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    max_range: float = 1.5

    def __post_init__(self) -> None:
        d = np.array(self.depth, dtype=np.float64, copy=True).reshape(self.height, self.width)
        if (d < 0).any() or not np.isfinite(d).all():
            raise ValueError("depth values must be finite and nonnegative")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("fx and fy must be positive")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)


def backproject(frame: DepthFrame) -> LabeledCloud:
    """Back-project a depth frame to a point cloud in the camera frame.

    Pixel (u, v) with depth d maps to (d*(u-cx)/fx, d*(v-cy)/fy, d).
    Pixels with d == 0 or d > max_range are skipped. Points are emitted in
    row-major pixel order.
    """
    v, u = np.mgrid[0 : frame.height, 0 : frame.width]
    d = frame.depth
    keep = (d > 0) & (d <= frame.max_range)
    d = d[keep]
    u = u[keep].astype(np.float64)
    v = v[keep].astype(np.float64)
    pts = np.column_stack(
        (d * (u - frame.cx) / frame.fx, d * (v - frame.cy) / frame.fy, d)
    )
    return LabeledCloud(pts)


def load_depth(png_path: str | Path, intrinsics_path: str | Path) -> DepthFrame:
    """Load a 16-bit grayscale PNG (millimeters) plus a key-value intrinsics file.

    The sidecar must define fx, fy, cx and cy; max_range is optional and
    defaults to 1.5 m.
    """
    from PIL import Image

    img = Image.open(png_path)
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise CloudFormatError(f"{png_path}: expected single-channel depth image")
    depth_m = arr.astype(np.float64) / 1000.0

    params: dict[str, float] = {}
    for lineno, raw in enumerate(Path(intrinsics_path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CloudFormatError(f"{intrinsics_path}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        try:
            params[key.strip()] = float(val.strip())
        except ValueError as exc:
            raise CloudFormatError(f"{intrinsics_path}:{lineno}: bad number {val!r}") from exc
    missing = {"fx", "fy", "cx", "cy"} - params.keys()
    if missing:
        raise CloudFormatError(f"{intrinsics_path}: missing keys {sorted(missing)}")
    h, w = depth_m.shape
    return DepthFrame(
        width=w,
        height=h,
        depth=depth_m,
        fx=params["fx"],
        fy=params["fy"],
        cx=params["cx"],
        cy=params["cy"],
        max_range=params.get("max_range", 1.5),
    )


def _infer_format(path: Path) -> str:
    if path.suffix.lower() == ".xyz":
        return "xyz"
    with open(path, "rb") as fh:
        head = fh.read(512)
    if not head.startswith(b"ply"):
        raise CloudFormatError(f"{path}: not a PLY file and not .xyz")
    if b"format ascii" in head:
        return "ply_ascii"
    return "ply_binary_le"


def read_cloud(path: str | Path, format: str | None = None) -> LabeledCloud:
    """Read a point cloud from an xyz or PLY file.

    Args:
        path: input file.
        format: one of "xyz", "ply_ascii", "ply_binary_le"; inferred from
            the extension / header when omitted.

    A PLY integer property named ``category`` (0 = H, 1 = V) populates the
    cloud's labels. Non-finite coordinates are a parse error.
    """
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt == "xyz":
        return _read_xyz(path)
    if fmt in ("ply_ascii", "ply_binary_le"):
        return _read_ply(path, fmt)
    raise CloudFormatError(f"unknown format {fmt!r}")


def _read_xyz(path: Path) -> LabeledCloud:
    rows = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 3:
                raise CloudFormatError(f"{path}:{lineno}: expected 3 coordinates, got {raw!r}")
            try:
                rows.append([float(parts[0]), float(parts[1]), float(parts[2])])
            except ValueError as exc:
                raise CloudFormatError(f"{path}:{lineno}: bad coordinate in {raw!r}") from exc
    pts = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
    if pts.size and not np.isfinite(pts).all():
        raise CloudFormatError(f"{path}: non-finite coordinates")
    return LabeledCloud(pts)


def _parse_ply_header(fh, path: Path):
    """Parse a PLY header; returns (elements, header_end_offset).

    elements is a list of (name, count, [(prop_name, dtype_code), ...]).
    """
    line = fh.readline()
    lineno = 1
    if line.strip() != b"ply":
        raise CloudFormatError(f"{path}:1: missing 'ply' magic")
    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    while True:
        line = fh.readline()
        lineno += 1
        if not line:
            raise CloudFormatError(f"{path}:{lineno}: unexpected end of header")
        tokens = line.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise CloudFormatError(f"{path}:{lineno}: property before element")
            if tokens[1] == "list":
                elements[-1][2].append((tokens[-1], "list:" + tokens[2] + ":" + tokens[3]))
            else:
                if tokens[1] not in _PLY_TYPES:
                    raise CloudFormatError(f"{path}:{lineno}: unsupported type {tokens[1]!r}")
                elements[-1][2].append((tokens[2], _PLY_TYPES[tokens[1]]))
        elif tokens[0] == "end_header":
            break
        else:
            raise CloudFormatError(f"{path}:{lineno}: unexpected header line {line!r}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise CloudFormatError(f"{path}: unsupported PLY format {fmt!r}")
    return fmt, elements, fh.tell(), lineno


def read_segmented(path: str | Path) -> tuple[LabeledCloud, np.ndarray | None]:
    """Read a PLY written with assignments; returns (cloud, plane ids or None)."""
    path = Path(path)
    fmt = _infer_format(path)
    if fmt == "xyz":
        raise CloudFormatError(f"{path}: xyz files carry no plane ids")
    data, names = _read_ply_data(path, fmt)
    cloud = _cloud_from_ply_data(path, data, names)
    assignment = None
    if "plane_id" in names:
        assignment = data["plane_id"].astype(np.int32)
    return cloud, assignment


def _read_ply(path: Path, expected_fmt: str) -> LabeledCloud:
    data, names = _read_ply_data(path, expected_fmt)
    return _cloud_from_ply_data(path, data, names)


def _cloud_from_ply_data(path: Path, data, names: list[str]) -> LabeledCloud:
    pts = np.column_stack(
        [data["x"].astype(np.float64), data["y"].astype(np.float64), data["z"].astype(np.float64)]
    )
    if pts.size and not np.isfinite(pts).all():
        raise CloudFormatError(f"{path}: non-finite vertex coordinates")
    labels = None
    if "category" in names:
        cat = data["category"].astype(np.int64)
        if cat.size and (cat.min() < 0 or cat.max() > 1):
            raise CloudFormatError(f"{path}: category values must be 0 or 1")
        labels = cat.astype(np.uint8)
    return LabeledCloud(pts, labels)


def _read_ply_data(path: Path, expected_fmt: str):
    with open(path, "rb") as fh:
        fmt, elements, offset, header_lines = _parse_ply_header(fh, path)
        actual = "ply_ascii" if fmt == "ascii" else "ply_binary_le"
        if actual != expected_fmt:
            raise CloudFormatError(f"{path}: file is {actual}, expected {expected_fmt}")

        vertex = next((e for e in elements if e[0] == "vertex"), None)
        if vertex is None:
            raise CloudFormatError(f"{path}: no vertex element")
        _, count, props = vertex
        names = [p[0] for p in props]
        for needed in ("x", "y", "z"):
            if needed not in names:
                raise CloudFormatError(f"{path}: vertex element lacks property {needed!r}")
        if any(code.startswith("list:") for _, code in props):
            raise CloudFormatError(f"{path}: list properties on vertices are unsupported")

        if fmt == "ascii":
            data = _read_ply_ascii_vertices(fh, path, count, names, header_lines)
        else:
            for name, ecount, eprops in elements:
                if name == "vertex":
                    break
                row = 0
                for _, code in eprops:
                    if code.startswith("list:"):
                        raise CloudFormatError(
                            f"{path}: cannot skip list element {name!r} before vertices"
                        )
                    row += np.dtype("<" + code).itemsize
                fh.seek(row * ecount, 1)
            dtype = np.dtype([(n, "<" + c) for n, c in props])
            raw = fh.read(dtype.itemsize * count)
            if len(raw) != dtype.itemsize * count:
                raise CloudFormatError(
                    f"{path}: truncated vertex data at byte {offset + len(raw)}"
                )
            data = np.frombuffer(raw, dtype=dtype)

    return data, names


def _read_ply_ascii_vertices(fh, path: Path, count: int, names: list[str], header_lines: int):
    out = {n: np.empty(count, dtype=np.float64) for n in names}
    for i in range(count):
        raw = fh.readline()
        if not raw:
            raise CloudFormatError(f"{path}:{header_lines + i + 1}: missing vertex row {i}")
        parts = raw.split()
        if len(parts) < len(names):
            raise CloudFormatError(
                f"{path}:{header_lines + i + 1}: expected {len(names)} values, got {len(parts)}"
            )
        try:
            for j, n in enumerate(names):
                out[n][i] = float(parts[j])
        except ValueError as exc:
            raise CloudFormatError(
                f"{path}:{header_lines + i + 1}: bad value in {raw!r}"
            ) from exc
    return out


def write_cloud(
    cloud: LabeledCloud,
    path: str | Path,
    format: str = "ply_binary_le",
    assignment: np.ndarray | None = None,
) -> None:
    """Write a cloud to disk, optionally with per-point plane assignments.

    Plane ids are stored both as an int32 ``plane_id`` property and as RGB
    colors from a fixed 16-entry palette cycled by id; ids < 0 mean
    unassigned and are colored gray.
    """
    path = Path(path)
    n = len(cloud)
    if assignment is not None:
        assignment = np.asarray(assignment, dtype=np.int64)
        if assignment.shape != (n,):
            raise ValueError(f"assignment has shape {assignment.shape}, expected ({n},)")

    if format == "xyz":
        with open(path, "w") as fh:
            for x, y, z in cloud.points:
                fh.write(f"{x:.6f} {y:.6f} {z:.6f}\n")
        return
    if format not in ("ply_ascii", "ply_binary_le"):
        raise CloudFormatError(f"unknown format {format!r}")

    props: list[tuple[str, str, np.ndarray]] = [
        ("x", "float", cloud.points[:, 0].astype(np.float32)),
        ("y", "float", cloud.points[:, 1].astype(np.float32)),
        ("z", "float", cloud.points[:, 2].astype(np.float32)),
    ]
    if cloud.labels is not None:
        props.append(("category", "uchar", cloud.labels.astype(np.uint8)))
    if assignment is not None:
        colors = np.where(
            assignment[:, None] >= 0,
            PALETTE[np.clip(assignment, 0, None) % len(PALETTE)],
            UNASSIGNED_COLOR[None, :],
        ).astype(np.uint8)
        props.append(("red", "uchar", colors[:, 0]))
        props.append(("green", "uchar", colors[:, 1]))
        props.append(("blue", "uchar", colors[:, 2]))
        props.append(("plane_id", "int", assignment.astype(np.int32)))

    fmt_line = "ascii" if format == "ply_ascii" else "binary_little_endian"
    header = ["ply", f"format {fmt_line} 1.0", f"element vertex {n}"]
    header += [f"property {t} {name}" for name, t, _ in props]
    header.append("end_header")

    if format == "ply_ascii":
        with open(path, "w") as fh:
            fh.write("\n".join(header) + "\n")
            cols = [vals for _, _, vals in props]
            for i in range(n):
                row = []
                for vals in cols:
                    v = vals[i]
                    row.append(f"{v:.6f}" if vals.dtype.kind == "f" else str(int(v)))
                fh.write(" ".join(row) + "\n")
    else:
        dtype = np.dtype(
            [(name, "<" + _PLY_TYPES[t]) for name, t, _ in props]
        )
        rec = np.empty(n, dtype=dtype)
        for name, _, vals in props:
            rec[name] = vals
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            fh.write(rec.tobytes())


def voxel_downsample(cloud: LabeledCloud, voxel: float) -> LabeledCloud:
    """Collapse each occupied voxel to the centroid of its points.

    The output label is the majority label of the voxel (ties go to H) and
    output points are ordered by lexicographic voxel index, so the result
    is independent of input ordering.
    """
    if voxel <= 0:
        raise ValueError(f"voxel size must be positive, got {voxel!r}")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    counts = np.bincount(inverse)
    sums = np.column_stack(
        [np.bincount(inverse, weights=cloud.points[:, c]) for c in range(3)]
    )
    centroids = sums / counts[:, None]
    labels = None
    if cloud.labels is not None:
        h_counts = np.bincount(inverse, weights=(cloud.labels == Category.H))
        labels = np.where(2 * h_counts >= counts, Category.H, Category.V).astype(np.uint8)
    return LabeledCloud(centroids, labels)


def _fps_numpy(pts: np.ndarray, n: int, start: int, tie_u: np.ndarray) -> np.ndarray:
    order = np.empty(n, dtype=np.int64)
    order[0] = start
    d2 = ((pts - pts[start]) ** 2).sum(axis=1)
    for i in range(1, n):
        m = d2.max()
        ties = np.flatnonzero(d2 == m)
        pick = ties[int(tie_u[i] * len(ties))] if len(ties) > 1 else ties[0]
        order[i] = pick
        cand = ((pts - pts[pick]) ** 2).sum(axis=1)
        np.minimum(d2, cand, out=d2)
    return order


try:  # optional numba acceleration for the greedy sampling loop
    import numba as _numba

    @_numba.njit(cache=True, fastmath=True)
    def _fps_kernel(pts, n, start, tie_u):  # pragma: no cover - exercised via wrapper
        m_pts = pts.shape[0]
        order = np.empty(n, dtype=np.int64)
        d2 = np.empty(m_pts, dtype=np.float64)
        order[0] = start
        # every round fuses the distance update with the next argmax scan
        pick = start
        for i in range(1, n):
            px, py, pz = pts[pick, 0], pts[pick, 1], pts[pick, 2]
            best = -1.0
            nxt = -1
            ties = 1
            for j in range(m_pts):
                dx = pts[j, 0] - px
                dy = pts[j, 1] - py
                dz = pts[j, 2] - pz
                c = dx * dx + dy * dy + dz * dz
                if i == 1 or c < d2[j]:
                    d2[j] = c
                v = d2[j]
                if v > best:
                    best = v
                    nxt = j
                    ties = 1
                elif v == best:
                    ties += 1
            if ties > 1:
                target = int(tie_u[i] * ties)
                seen = 0
                for j in range(m_pts):
                    if d2[j] == best:
                        if seen == target:
                            nxt = j
                            break
                        seen += 1
            order[i] = nxt
            pick = nxt
        return order

    def _fps_impl(pts, n, start, tie_u):
        return _fps_kernel(pts, n, start, tie_u)

except ImportError:  # pragma: no cover - numba is optional

    def _fps_impl(pts, n, start, tie_u):
        return _fps_numpy(pts, n, start, tie_u)


def furthest_point_sample_indices(cloud: LabeledCloud, n: int, seed: int = 0) -> np.ndarray:
    """Greedy furthest-point sampling; returns selected indices in pick order.

    The walk starts at the point nearest the cloud centroid and always
    picks the point furthest from the already-selected set. The seed only
    breaks exact distance ties, so the first m entries equal an m-point
    sample of the same cloud.
    """
    m = len(cloud)
    if n > m:
        raise ValueError(f"cannot sample {n} points from a cloud of {m}")
    if n == 0:
        return np.empty(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    tie_u = rng.random(max(n, 1))
    pts = np.ascontiguousarray(cloud.points)
    centroid = pts.mean(axis=0)
    d2c = ((pts - centroid) ** 2).sum(axis=1)
    mn = d2c.min()
    ties = np.flatnonzero(d2c == mn)
    start = int(ties[int(tie_u[0] * len(ties))]) if len(ties) > 1 else int(ties[0])
    return np.asarray(_fps_impl(pts, n, start, tie_u), dtype=np.int64)


def furthest_point_sample(cloud: LabeledCloud, n: int, seed: int = 0) -> LabeledCloud:
    """Downsample to exactly ``n`` points by greedy furthest-point sampling."""
    idx = furthest_point_sample_indices(cloud, n, seed)
    labels = cloud.labels[idx] if cloud.labels is not None else None
    return LabeledCloud(cloud.points[idx], labels)
