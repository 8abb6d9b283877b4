"""Core types: semantic labels, labeled point clouds, sparse voxel grids.

Clouds carry per-point position (meters), RGB color in [0, 1] and a semantic
label code. Voxelization uses half-open cells [origin + k*e, origin + (k+1)*e)
and majority voting with a deterministic nearest-corner tie rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

NUM_CLASSES = 11  # semantic classes use codes 1..11; 0 means empty
UNKNOWN_SEG = 255  # segmentation image value for pixels with no data

LABEL_NAMES = (
    "empty", "ceiling", "floor", "wall", "window", "chair",
    "bed", "sofa", "table", "tvs", "furniture", "objects",
)


class SemanticLabel(IntEnum):
    """Semantic class codes. 0 is reserved for empty space."""

    EMPTY = 0
    CEILING = 1
    FLOOR = 2
    WALL = 3
    WINDOW = 4
    CHAIR = 5
    BED = 6
    SOFA = 7
    TABLE = 8
    TVS = 9
    FURNITURE = 10
    OBJECTS = 11


@dataclass(frozen=True)
class Point:
    """A single labeled, colored point."""

    position: tuple
    color: tuple
    label: SemanticLabel

    def __post_init__(self):
        pos = tuple(float(c) for c in self.position)
        if len(pos) != 3 or not all(np.isfinite(pos)):
            raise ValueError("position must be a finite 3-vector")
        col = tuple(min(1.0, max(0.0, float(c))) for c in self.color)
        if len(col) != 3:
            raise ValueError("color must be an RGB triple")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "color", col)
        object.__setattr__(self, "label", SemanticLabel(self.label))


class LabeledPointCloud:
    """Ordered point set with positions, colors, labels and a bounding box.

    Arrays are stored read-only. ``bounds`` is a (2, 3) array of the box
    min/max corners; it defaults to the tight bounds of the positions but a
    larger box may be supplied (it must contain every point).
    """

    __slots__ = ("positions", "colors", "labels", "bounds")

    def __init__(self, positions, colors, labels, bounds=None):
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        colors = np.asarray(colors, dtype=np.float64)
        labels = np.asarray(labels)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise ValueError("positions must have shape (N, 3)")
        n = positions.shape[0]
        if colors.shape != (n, 3):
            raise ValueError("colors must have shape (N, 3)")
        if labels.shape != (n,):
            raise ValueError("labels must have shape (N,)")
        if n and not np.isfinite(positions).all():
            raise ValueError("positions must be finite")
        if labels.size and (labels.min() < 0 or labels.max() > NUM_CLASSES):
            raise ValueError("labels must be codes 0..%d" % NUM_CLASSES)
        colors = np.clip(colors, 0.0, 1.0)
        labels = labels.astype(np.uint8)
        if bounds is None:
            if n:
                bounds = np.stack([positions.min(axis=0), positions.max(axis=0)])
            else:
                bounds = np.zeros((2, 3))
        else:
            bounds = np.asarray(bounds, dtype=np.float64).reshape(2, 3)
            if n and ((positions < bounds[0] - 1e-12).any()
                      or (positions > bounds[1] + 1e-12).any()):
                raise ValueError("bounds must contain every point")
        for arr in (positions, colors, labels, bounds):
            arr.flags.writeable = False
        self.positions = positions
        self.colors = colors
        self.labels = labels
        self.bounds = bounds

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.uint8))

    def __len__(self):
        return self.positions.shape[0]

    def __getitem__(self, i) -> Point:
        return Point(tuple(self.positions[i]), tuple(self.colors[i]),
                     SemanticLabel(int(self.labels[i])))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def merged(self, other, bounds=None):
        """Concatenate with another cloud. Bounds default to the union box."""
        pos = np.concatenate([self.positions, other.positions])
        col = np.concatenate([self.colors, other.colors])
        lab = np.concatenate([self.labels, other.labels])
        if bounds is None:
            bounds = np.stack([
                np.minimum(self.bounds[0], other.bounds[0]),
                np.maximum(self.bounds[1], other.bounds[1]),
            ])
        return LabeledPointCloud(pos, col, lab, bounds=bounds)


@dataclass(frozen=True)
class LabeledVoxelGrid:
    """Sparse labeled occupancy grid over half-open cells.

    ``cell_indices`` holds the (ix, iy, iz) of occupied cells sorted by flat
    id; ``counts`` and ``labels`` align with it. Cells not listed are empty.
    """

    edge: float
    origin: np.ndarray
    dims: tuple
    cell_indices: np.ndarray
    counts: np.ndarray
    labels: np.ndarray
    out_of_bounds: int

    @property
    def flat_ids(self):
        return np.ravel_multi_index(tuple(self.cell_indices.T), self.dims)

    @property
    def occupied_cell_count(self):
        return self.cell_indices.shape[0]

    def lookup(self, ix, iy, iz):
        """Return (occupied, label, count) for one cell."""
        flat = np.ravel_multi_index((ix, iy, iz), self.dims)
        ids = self.flat_ids
        k = np.searchsorted(ids, flat)
        if k < ids.size and ids[k] == flat:
            return True, int(self.labels[k]), int(self.counts[k])
        return False, 0, 0


def _cell_of(positions, edge, origin):
    return np.floor((positions - origin) / edge).astype(np.int64)


def _majority_by_cell(positions, labels, flat, origin, edge, dims, orig_index):
    """Group points by cell and vote a label per occupied cell.

    Majority label wins; on a vote tie the label of the point nearest the
    cell's minimum corner wins, equidistant ties going to the lowest point
    index. Returns (sorted unique flat ids, counts, winning labels).
    """
    if (labels == 0).any():
        raise ValueError("points labeled 0 (empty) cannot be voxelized")
    order = np.argsort(flat, kind="stable")
    fs = flat[order]
    pos_s = positions[order]
    lab_s = labels[order].astype(np.int64)
    idx_s = orig_index[order]
    cells, starts, counts = np.unique(fs, return_index=True, return_counts=True)
    m = cells.size
    seg = np.repeat(np.arange(m), counts)
    votes = np.bincount(seg * NUM_CLASSES + (lab_s - 1),
                        minlength=m * NUM_CLASSES).reshape(m, NUM_CLASSES)
    best = votes.max(axis=1)
    winner = votes.argmax(axis=1).astype(np.int64) + 1
    tied = (votes == best[:, None]).sum(axis=1) > 1
    if tied.any():
        cell3 = np.stack(np.unravel_index(cells, dims), axis=1)
        corner = origin + cell3 * edge
        cand = tied[seg] & (votes[seg, lab_s - 1] == best[seg])
        d2 = ((pos_s - corner[seg]) ** 2).sum(axis=1)
        sub = np.nonzero(cand)[0]
        ordk = sub[np.lexsort((idx_s[sub], d2[sub], seg[sub]))]
        segk = seg[ordk]
        first = np.ones(ordk.size, dtype=bool)
        first[1:] = segk[1:] != segk[:-1]
        winner[segk[first]] = lab_s[ordk[first]]
    return cells, counts, winner.astype(np.uint8)


def voxelize_points(cloud, edge, origin, dims):
    """Bin a cloud into a labeled voxel grid.

    Args:
        cloud: LabeledPointCloud.
        edge: cell edge length, meters, > 0.
        origin: grid minimum corner, (3,).
        dims: cell counts per axis, (3,).

    Returns:
        LabeledVoxelGrid; points outside the grid are counted, not binned.
    """
    if edge <= 0:
        raise ValueError("edge must be positive")
    origin = np.asarray(origin, dtype=np.float64)
    dims = tuple(int(d) for d in dims)
    if any(d <= 0 for d in dims):
        raise ValueError("dims must be positive")
    pos = cloud.positions
    idx = _cell_of(pos, edge, origin)
    inb = np.all((idx >= 0) & (idx < np.asarray(dims)), axis=1)
    oob = int((~inb).sum())
    if not inb.any():
        return LabeledVoxelGrid(edge, origin, dims,
                                np.zeros((0, 3), dtype=np.int64),
                                np.zeros(0, dtype=np.int64),
                                np.zeros(0, dtype=np.uint8), oob)
    flat = np.ravel_multi_index(tuple(idx[inb].T), dims)
    orig_index = np.nonzero(inb)[0]
    cells, counts, winner = _majority_by_cell(
        pos[inb], cloud.labels[inb], flat, origin, edge, dims, orig_index)
    cell3 = np.stack(np.unravel_index(cells, dims), axis=1)
    return LabeledVoxelGrid(edge, origin, dims, cell3, counts, winner, oob)


def voxel_downsample(cloud, edge):
    """Collapse each occupied cell to its centroid with mean color.

    The cell label follows the same majority/tie rule as voxelization. Output
    points are ordered by cell id, so the result is deterministic.
    """
    if edge <= 0:
        raise ValueError("edge must be positive")
    n = len(cloud)
    if n == 0:
        return LabeledPointCloud.empty()
    origin = cloud.bounds[0]
    ext = cloud.bounds[1] - origin
    dims = tuple(int(np.floor(e / edge)) + 1 for e in ext)
    pos = cloud.positions
    idx = _cell_of(pos, edge, origin)
    idx = np.clip(idx, 0, np.asarray(dims) - 1)  # guard float edge effects
    flat = np.ravel_multi_index(tuple(idx.T), dims)
    cells, counts, winner = _majority_by_cell(
        pos, cloud.labels, flat, origin, edge, dims, np.arange(n))
    inv = np.searchsorted(cells, flat)
    m = cells.size
    centroid = np.zeros((m, 3))
    colmean = np.zeros((m, 3))
    for a in range(3):
        centroid[:, a] = np.bincount(inv, weights=pos[:, a], minlength=m)
        colmean[:, a] = np.bincount(inv, weights=cloud.colors[:, a], minlength=m)
    centroid /= counts[:, None]
    colmean /= counts[:, None]
    return LabeledPointCloud(centroid, colmean, winner)
