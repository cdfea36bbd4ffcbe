"""Fixed-extent octree over a labeled point cloud.

The tree is stored flat: points are sorted once by their interleaved cell
code at maximum depth, and every occupied node at every level is a
contiguous slice of that order. Child octant bits follow the convention
bit0 = x-high, bit1 = y-high, bit2 = z-high. Cell boundaries are half-open
on the high side except for the root's max face, which is closed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from planeseg.core import Category, LabeledCloud, SegmenterConfig

__all__ = ["Octree", "OctreeNode", "build", "children_of", "dump_octree", "node_points"]


def _interleave(ix: np.ndarray, iy: np.ndarray, iz: np.ndarray, depth: int) -> np.ndarray:
    """Pack per-axis cell coordinates into one code, x in the low bit of each triple."""
    code = np.zeros(ix.shape, dtype=np.int64)
    for j in range(depth):
        code |= ((ix >> j) & 1) << (3 * j)
        code |= ((iy >> j) & 1) << (3 * j + 1)
        code |= ((iz >> j) & 1) << (3 * j + 2)
    return code


def _deinterleave(code: int, depth: int) -> tuple[int, int, int]:
    ix = iy = iz = 0
    for j in range(depth):
        ix |= ((code >> (3 * j)) & 1) << j
        iy |= ((code >> (3 * j + 1)) & 1) << j
        iz |= ((code >> (3 * j + 2)) & 1) << j
    return ix, iy, iz


@dataclass(frozen=True)
class _Level:
    codes: np.ndarray    # sorted unique node codes at this depth
    start: np.ndarray    # slice starts into the sorted point order
    end: np.ndarray      # slice ends
    count_h: np.ndarray
    count_v: np.ndarray


@dataclass(frozen=True)
class Octree:
    """Immutable octree; nodes are addressed by (depth, code).

    Attributes:
        cloud: the source cloud (the tree stores indices into it).
        origin: root cube min corner.
        extent: root cube edge length, m.
        max_depth: leaf depth; leaf edge = extent / 2**max_depth.
        dropped_count: points outside the root cube, excluded from the tree.
    """

    cloud: LabeledCloud
    origin: np.ndarray
    extent: float
    max_depth: int
    dropped_count: int
    dropped_indices: np.ndarray
    sorted_indices: np.ndarray = field(repr=False)
    levels: list[_Level] = field(repr=False)

    @property
    def root(self) -> "OctreeNode":
        return OctreeNode(self, 0, 0, 0)

    @property
    def leaf_edge(self) -> float:
        return self.extent / (1 << self.max_depth)

    def node(self, depth: int, code: int) -> "OctreeNode":
        lv = self.levels[depth]
        pos = int(np.searchsorted(lv.codes, code))
        if pos >= len(lv.codes) or lv.codes[pos] != code:
            raise KeyError(f"no occupied node at depth {depth} with code {code}")
        return OctreeNode(self, depth, code, pos)

    def occupied_nodes(self, depth: int) -> list["OctreeNode"]:
        lv = self.levels[depth]
        return [OctreeNode(self, depth, int(c), i) for i, c in enumerate(lv.codes)]


class OctreeNode:
    """View of one occupied octree cell."""

    __slots__ = ("tree", "depth", "code", "_pos")

    def __init__(self, tree: Octree, depth: int, code: int, pos: int):
        self.tree = tree
        self.depth = depth
        self.code = code
        self._pos = pos

    @property
    def _level(self) -> _Level:
        return self.tree.levels[self.depth]

    @property
    def count_h(self) -> int:
        return int(self._level.count_h[self._pos])

    @property
    def count_v(self) -> int:
        return int(self._level.count_v[self._pos])

    @property
    def count(self) -> int:
        return int(self._level.end[self._pos] - self._level.start[self._pos])

    @property
    def point_indices(self) -> np.ndarray:
        """Indices into the source cloud, ascending."""
        s, e = self._level.start[self._pos], self._level.end[self._pos]
        return np.sort(self.tree.sorted_indices[s:e])

    @property
    def is_leaf(self) -> bool:
        return self.depth == self.tree.max_depth

    @property
    def bounds_min(self) -> np.ndarray:
        ix, iy, iz = _deinterleave(self.code, self.depth)
        edge = self.tree.extent / (1 << self.depth)
        return self.tree.origin + np.array([ix, iy, iz], dtype=np.float64) * edge

    @property
    def bounds_max(self) -> np.ndarray:
        edge = self.tree.extent / (1 << self.depth)
        return self.bounds_min + edge

    @property
    def parent(self) -> "OctreeNode | None":
        if self.depth == 0:
            return None
        return self.tree.node(self.depth - 1, self.code >> 3)

    @property
    def children(self) -> list["OctreeNode"]:
        return children_of(self)

    @property
    def path(self) -> str:
        """Octant digits from the root; '-' for the root itself."""
        if self.depth == 0:
            return "-"
        digits = [(self.code >> (3 * (self.depth - 1 - i))) & 7 for i in range(self.depth)]
        return "".join(str(d) for d in digits)

    def __repr__(self) -> str:
        return (
            f"OctreeNode(depth={self.depth}, path={self.path!r}, "
            f"h={self.count_h}, v={self.count_v})"
        )


def build(
    cloud: LabeledCloud,
    cfg: SegmenterConfig,
    origin: np.ndarray | None = None,
) -> Octree:
    """Build the octree for a labeled cloud.

    The root cube is centered on the cloud's bounding-box center unless an
    explicit ``origin`` (min corner) is given. Points outside the cube are
    dropped and counted, never rescaled. Construction is insertion-order
    independent: any permutation of the cloud yields identical per-node
    index sets and counts.

    Raises:
        ValueError: empty cloud, missing labels, or nonpositive extent.
    """
    if len(cloud) == 0:
        raise ValueError("cannot build an octree over an empty cloud")
    if cloud.labels is None:
        raise ValueError("octree construction requires a labeled cloud")
    if cfg.octree_extent <= 0:
        raise ValueError(f"octree extent must be positive, got {cfg.octree_extent!r}")
    depth = cfg.octree_max_depth
    extent = float(cfg.octree_extent)

    pts = cloud.points
    if origin is None:
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        origin = (lo + hi) / 2.0 - extent / 2.0
    origin = np.asarray(origin, dtype=np.float64)

    rel = pts - origin
    inside = ((rel >= 0.0) & (rel <= extent)).all(axis=1)
    dropped_indices = np.flatnonzero(~inside).astype(np.int64)
    kept = np.flatnonzero(inside).astype(np.int64)
    if len(kept) == 0:
        raise ValueError("no points fall inside the octree extent")

    cells = 1 << depth
    leaf = extent / cells
    coords = np.floor(rel[kept] / leaf).astype(np.int64)
    # the root's max face is closed: clamp exact-max coordinates into the last cell
    np.clip(coords, 0, cells - 1, out=coords)
    codes = _interleave(coords[:, 0], coords[:, 1], coords[:, 2], depth)

    order = np.argsort(codes, kind="stable")
    sorted_indices = kept[order]
    sorted_codes = codes[order]
    is_h = (cloud.labels[sorted_indices] == Category.H).astype(np.int64)
    cum_h = np.concatenate(([0], np.cumsum(is_h)))

    levels: list[_Level] = []
    for d in range(depth + 1):
        shifted = sorted_codes >> (3 * (depth - d))
        cut = np.flatnonzero(np.diff(shifted)) + 1
        starts = np.concatenate(([0], cut)).astype(np.int64)
        ends = np.concatenate((cut, [len(shifted)])).astype(np.int64)
        ucodes = shifted[starts]
        ch = cum_h[ends] - cum_h[starts]
        levels.append(
            _Level(
                codes=ucodes,
                start=starts,
                end=ends,
                count_h=ch,
                count_v=(ends - starts) - ch,
            )
        )

    return Octree(
        cloud=cloud,
        origin=origin,
        extent=extent,
        max_depth=depth,
        dropped_count=len(dropped_indices),
        dropped_indices=dropped_indices,
        sorted_indices=sorted_indices,
        levels=levels,
    )


def children_of(node: OctreeNode) -> list[OctreeNode]:
    """Occupied children of a node; empty octants yield nothing. Leaves give []."""
    if node.is_leaf:
        return []
    tree = node.tree
    lv = tree.levels[node.depth + 1]
    lo = int(np.searchsorted(lv.codes, node.code << 3))
    hi = int(np.searchsorted(lv.codes, (node.code + 1) << 3))
    return [OctreeNode(tree, node.depth + 1, int(lv.codes[i]), i) for i in range(lo, hi)]


def node_points(node: OctreeNode, cloud: LabeledCloud) -> np.ndarray:
    """Coordinates of a node's points in source-cloud index order."""
    return cloud.points[node.point_indices]


def dump_octree(tree: Octree, path: str | Path) -> None:
    """Write one line per occupied node: depth, octant path, count_h, count_v."""
    with open(path, "w") as fh:
        fh.write("# depth path count_h count_v\n")
        for d in range(tree.max_depth + 1):
            for node in tree.occupied_nodes(d):
                fh.write(f"{d} {node.path} {node.count_h} {node.count_v}\n")
