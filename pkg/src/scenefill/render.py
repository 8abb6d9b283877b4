"""Point-splat rendering, hole masks, and back-projection.

Rendering projects every point, rounds to the nearest pixel center, and
writes a square splat of the configured radius; per pixel the smallest depth
wins, with exact depth ties going to the lower point index. A pixel is a
*hole* when it is empty but falls inside the 2D convex hull of the cloud's
bounding-box corners (box clipped to the near plane first), which separates
occlusion holes from background. All functions are pure and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .core import UNKNOWN_SEG, LabeledPointCloud
from .views import project_points

_BOX_EDGES = (
    (0, 1), (0, 2), (0, 4), (1, 3), (1, 5), (2, 3),
    (2, 6), (3, 7), (4, 5), (4, 6), (5, 7), (6, 7),
)


@dataclass
class ViewMaps:
    """Depth/color/segmentation images of one view plus its hole mask.

    depth: (H, W) float, 0 where empty, otherwise in [near, far].
    color: (H, W, 3) float in [0, 1].
    seg:   (H, W) uint8 label codes, 255 where empty.
    hole:  (H, W) bool, empty pixels inside the scene hull.
    """

    depth: np.ndarray
    color: np.ndarray
    seg: np.ndarray
    hole: np.ndarray

    def __post_init__(self):
        h, w = self.depth.shape
        if self.color.shape != (h, w, 3) or self.seg.shape != (h, w) \
                or self.hole.shape != (h, w):
            raise ValueError("map shapes disagree")

    def copy(self):
        return ViewMaps(self.depth.copy(), self.color.copy(),
                        self.seg.copy(), self.hole.copy())


def _empty_maps(camera):
    h, w = camera.height, camera.width
    return ViewMaps(np.zeros((h, w)), np.zeros((h, w, 3)),
                    np.full((h, w), UNKNOWN_SEG, dtype=np.uint8),
                    np.zeros((h, w), dtype=bool))


def bounds_hull_mask(bounds, view, camera):
    """Pixels covered by the projected bounding box, near-plane clipped."""
    corners = np.array([[bounds[i, 0], bounds[j, 1], bounds[k, 2]]
                        for i in range(2) for j in range(2) for k in range(2)])
    rot = view.rotation()
    pc = (corners - view.position()) @ rot.T
    pts = []
    for p in pc:
        if p[2] >= camera.near:
            pts.append((camera.fx * p[0] / p[2] + camera.cx,
                        camera.fy * p[1] / p[2] + camera.cy))
    for a, b in _BOX_EDGES:
        za, zb = pc[a, 2], pc[b, 2]
        if (za - camera.near) * (zb - camera.near) < 0:
            t = (camera.near - za) / (zb - za)
            p = pc[a] + t * (pc[b] - pc[a])
            pts.append((camera.fx * p[0] / camera.near + camera.cx,
                        camera.fy * p[1] / camera.near + camera.cy))
    mask = np.zeros((camera.height, camera.width), dtype=bool)
    if len(pts) < 3:
        return mask
    try:
        hull = ConvexHull(np.asarray(pts))
    except QhullError:
        return mask  # degenerate (collinear) footprint has zero area
    uu = np.arange(camera.width, dtype=np.float64)[None, :]
    vv = np.arange(camera.height, dtype=np.float64)[:, None]
    mask[:] = True
    for a, b, c in hull.equations:
        mask &= a * uu + b * vv + c <= 1e-9
    return mask


def render_views(cloud, view, camera, splat_radius=1, hull_bounds=None,
                 depth_only=False):
    """Render one view of a cloud with z-buffered square splats.

    Args:
        cloud: LabeledPointCloud (may be empty).
        view: Viewpoint.
        camera: CameraModel.
        splat_radius: half-width of the square splat in pixels, >= 0.
        hull_bounds: optional (2, 3) box overriding cloud.bounds for the
            hole mask (an episode keeps this fixed so hole counts are
            monotone as points are added).
        depth_only: skip the color/label gathers; seg stays 255 and color
            zero everywhere. Identical depth and hole mask, cheaper for
            hole sweeps over many views.

    Returns:
        ViewMaps. Points outside the depth range or image are skipped.
    """
    if splat_radius < 0:
        raise ValueError("splat_radius must be >= 0")
    maps = _empty_maps(camera)
    if hull_bounds is None:
        hull_bounds = cloud.bounds
    if len(cloud) == 0:
        return maps
    h, w = camera.height, camera.width
    u, v, z = project_points(camera, view, cloud.positions)
    keep = (z >= camera.near) & (z <= camera.far)
    keep &= np.isfinite(u) & np.isfinite(v)
    ids = np.nonzero(keep)[0]
    if ids.size:
        ui = np.rint(u[ids]).astype(np.int64)
        vi = np.rint(v[ids]).astype(np.int64)
        zk = z[ids]
        # draw far-to-near so the last write per pixel is the nearest point;
        # among equal depths the lowest index must land last
        order = np.lexsort((-ids, -zk))
        ui, vi, zk, ids = ui[order], vi[order], zk[order], ids[order]
        zbuf = np.full((h, w), np.inf)
        ibuf = np.full((h, w), -1, dtype=np.int64)
        tz = np.empty_like(zbuf)
        ti = np.empty_like(ibuf)
        r = int(splat_radius)
        for dv in range(-r, r + 1):
            for du in range(-r, r + 1):
                uu = ui + du
                vv = vi + dv
                inb = (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h)
                if not inb.any():
                    continue
                tz.fill(np.inf)
                ti.fill(-1)
                tz[vv[inb], uu[inb]] = zk[inb]
                ti[vv[inb], uu[inb]] = ids[inb]
                upd = (tz < zbuf) | ((tz == zbuf) & (ti >= 0) & (ti < ibuf))
                zbuf[upd] = tz[upd]
                ibuf[upd] = ti[upd]
        lit = ibuf >= 0
        maps.depth[lit] = zbuf[lit]
        if not depth_only:
            src = ibuf[lit]
            maps.color[lit] = cloud.colors[src]
            maps.seg[lit] = cloud.labels[src]
    hull = bounds_hull_mask(hull_bounds, view, camera)
    maps.hole[:] = hull & (maps.depth == 0.0)
    return maps


def backproject(maps, hole_mask, view, camera):
    """Lift filled hole pixels into labeled world points.

    One point per hole pixel whose depth lies in [near, far] and whose label
    is a valid class code; other hole pixels are skipped and counted. Points
    come out in row-major pixel order.

    Returns:
        (LabeledPointCloud, skipped_count)
    """
    ys, xs = np.nonzero(hole_mask)
    d = maps.depth[ys, xs]
    lab = maps.seg[ys, xs]
    ok = (d >= camera.near) & (d <= camera.far) & (lab >= 1) & (lab <= 11)
    skipped = int((~ok).sum())
    ys, xs, d = ys[ok], xs[ok], d[ok]
    pc = np.stack([
        (xs - camera.cx) / camera.fx * d,
        (ys - camera.cy) / camera.fy * d,
        d,
    ], axis=1)
    rot = view.rotation()
    world = pc @ rot + view.position()
    cloud = LabeledPointCloud(world, maps.color[ys, xs], lab[ok])
    return cloud, skipped


def view_hole_counts(cloud, actions, camera, splat_radius=1, hull_bounds=None,
                     return_masks=False):
    """Hole-pixel count for every candidate view; optionally the masks too."""
    counts = np.zeros(len(actions), dtype=np.int64)
    masks = []
    for i, view in enumerate(actions.views):
        maps = render_views(cloud, view, camera, splat_radius, hull_bounds,
                            depth_only=True)
        counts[i] = int(maps.hole.sum())
        if return_masks:
            masks.append(maps.hole)
    if return_masks:
        return counts, masks
    return counts


def hole_area(cloud, actions, camera, splat_radius=1, hull_bounds=None):
    """Total hole pixels over all candidate views (the coverage deficit)."""
    if len(cloud) == 0:
        return 0
    return int(view_hole_counts(cloud, actions, camera,
                                splat_radius, hull_bounds).sum())
