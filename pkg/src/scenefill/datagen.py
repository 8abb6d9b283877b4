"""Synthetic room generator and input-view synthesis.

A scene is a box room: floor, ceiling, four walls, a window pane set into
the back wall, and a few axis-aligned furniture boxes standing on the
floor. The front (+z) wall has a rectangular opening wide enough that the
input camera, which sits outside on the +z axis, sees the interior
unobstructed; rays that would otherwise exit an open face mostly land on
that wall, so view completion can close them. Surfaces are sampled with
one jittered point per grid cell at a target density, so coverage is
uniform and the point count is deterministic per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LabeledPointCloud, SemanticLabel
from .render import ViewMaps, render_views

# uint8 sRGB triplets, stored as value/255 floats on the clouds
PALETTE = {
    SemanticLabel.CEILING: (230, 230, 230),
    SemanticLabel.FLOOR: (160, 120, 80),
    SemanticLabel.WALL: (200, 200, 180),
    SemanticLabel.WINDOW: (150, 200, 255),
    SemanticLabel.CHAIR: (200, 60, 60),
    SemanticLabel.BED: (220, 170, 200),
    SemanticLabel.SOFA: (60, 120, 200),
    SemanticLabel.TABLE: (170, 120, 60),
    SemanticLabel.TVS: (40, 40, 40),
    SemanticLabel.FURNITURE: (120, 180, 120),
    SemanticLabel.OBJECTS: (240, 200, 60),
}

_MOVABLE = (SemanticLabel.CHAIR, SemanticLabel.BED, SemanticLabel.SOFA,
            SemanticLabel.TABLE, SemanticLabel.TVS, SemanticLabel.FURNITURE,
            SemanticLabel.OBJECTS)


@dataclass(frozen=True)
class SceneSpec:
    """Parameters for one synthetic room."""

    seed: int = 0
    density_per_m2: float = 3500.0
    room_half_x: float = 2.4
    room_half_y: float = 1.22
    room_half_z: float = 2.4
    # opening in the front wall; must admit the input camera's frustum,
    # which crosses the z = room_half_z plane within roughly 0.38 x 0.28 m,
    # yet stay small: every opening pixel seen from inside the room is a
    # hole no completion can ever close
    opening_half_x: float = 0.9
    opening_half_y: float = 0.45
    furniture_min: int = 2
    furniture_max: int = 4
    furniture_labels: tuple = tuple(int(c) for c in _MOVABLE)

    def __post_init__(self):
        if self.density_per_m2 <= 0:
            raise ValueError("density must be positive")
        if not 1 <= self.furniture_min <= self.furniture_max:
            raise ValueError("bad furniture count range")
        if not (0 < self.opening_half_x < self.room_half_x
                and 0 < self.opening_half_y < self.room_half_y):
            raise ValueError("opening must fit inside the front wall")
        labs = self.furniture_labels
        if not labs or any(int(c) != c or not 1 <= c <= 11 for c in labs):
            raise ValueError(f"furniture labels must be codes in 1..11: {labs}")


def _sample_rect(rng, density, fixed_axis, fixed_val, u_axis, u_range,
                 v_axis, v_range):
    """Jittered-grid samples on an axis-aligned rectangle."""
    lu = u_range[1] - u_range[0]
    lv = v_range[1] - v_range[0]
    nu = max(1, int(round(lu * math.sqrt(density))))
    nv = max(1, int(round(lv * math.sqrt(density))))
    iu, iv = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    us = u_range[0] + (iu + rng.random((nu, nv))).ravel() * (lu / nu)
    vs = v_range[0] + (iv + rng.random((nu, nv))).ravel() * (lv / nv)
    pts = np.empty((us.size, 3), dtype=np.float64)
    pts[:, fixed_axis] = fixed_val
    pts[:, u_axis] = us
    pts[:, v_axis] = vs
    return pts


def _place_furniture(rng, n, half_x, half_z, floor_y, labels):
    """Non-overlapping footprints; sizes and labels drawn per box."""
    boxes = []
    margin = 0.5
    for _ in range(n):
        label = int(rng.choice(np.array([int(c) for c in labels])))
        for _attempt in range(100):
            w = rng.uniform(0.4, 1.0)
            d = rng.uniform(0.4, 1.0)
            h = rng.uniform(0.4, 1.2)
            cx = rng.uniform(-(half_x - margin - w / 2), half_x - margin - w / 2)
            cz = rng.uniform(-(half_z - margin - d / 2), half_z - margin - d / 2)
            x0, x1 = cx - w / 2, cx + w / 2
            z0, z1 = cz - d / 2, cz + d / 2
            clash = any(x0 < b["x1"] and x1 > b["x0"] and
                        z0 < b["z1"] and z1 > b["z0"] for b in boxes)
            if not clash:
                break
        boxes.append({"x0": x0, "x1": x1, "z0": z0, "z1": z1,
                      "y0": floor_y, "y1": floor_y + h, "label": label})
    return boxes


def generate_scene(spec):
    """Build the ground-truth cloud for one room.

    Cloud bounds are the room box itself, so downstream hull masks cover
    the whole scene rather than the sampled extent.
    """
    rng = np.random.default_rng(spec.seed)
    hx, hy, hz = spec.room_half_x, spec.room_half_y, spec.room_half_z
    dens = spec.density_per_m2

    n_furn = int(rng.integers(spec.furniture_min, spec.furniture_max + 1))
    boxes = _place_furniture(rng, n_furn, hx, hz, -hy, spec.furniture_labels)

    # window pane, coplanar with the back wall
    win_cx = rng.uniform(-1.0, 1.0)
    win_cy = rng.uniform(0.0, 0.4)
    win_w = rng.uniform(1.0, 1.6)
    win_h = rng.uniform(0.8, 1.2)

    chunks, labels = [], []

    def add(points, label):
        if points.size:
            chunks.append(points)
            labels.append(np.full(points.shape[0], int(label), dtype=np.uint8))

    floor = _sample_rect(rng, dens, 1, -hy, 0, (-hx, hx), 2, (-hz, hz))
    keep = np.ones(floor.shape[0], dtype=bool)
    for b in boxes:
        inside = ((floor[:, 0] >= b["x0"]) & (floor[:, 0] <= b["x1"]) &
                  (floor[:, 2] >= b["z0"]) & (floor[:, 2] <= b["z1"]))
        keep &= ~inside
    add(floor[keep], SemanticLabel.FLOOR)

    add(_sample_rect(rng, dens, 1, hy, 0, (-hx, hx), 2, (-hz, hz)),
        SemanticLabel.CEILING)

    back = _sample_rect(rng, dens, 2, -hz, 0, (-hx, hx), 1, (-hy, hy))
    in_win = ((np.abs(back[:, 0] - win_cx) <= win_w / 2) &
              (np.abs(back[:, 1] - win_cy) <= win_h / 2))
    add(back[~in_win], SemanticLabel.WALL)
    add(back[in_win], SemanticLabel.WINDOW)

    front = _sample_rect(rng, dens, 2, hz, 0, (-hx, hx), 1, (-hy, hy))
    in_open = ((np.abs(front[:, 0]) <= spec.opening_half_x) &
               (np.abs(front[:, 1]) <= spec.opening_half_y))
    add(front[~in_open], SemanticLabel.WALL)

    add(_sample_rect(rng, dens, 0, -hx, 2, (-hz, hz), 1, (-hy, hy)),
        SemanticLabel.WALL)
    add(_sample_rect(rng, dens, 0, hx, 2, (-hz, hz), 1, (-hy, hy)),
        SemanticLabel.WALL)

    for b in boxes:
        add(_sample_rect(rng, dens, 1, b["y1"], 0, (b["x0"], b["x1"]),
                         2, (b["z0"], b["z1"])), b["label"])
        for fx, fval in ((0, b["x0"]), (0, b["x1"])):
            add(_sample_rect(rng, dens, fx, fval, 1, (b["y0"], b["y1"]),
                             2, (b["z0"], b["z1"])), b["label"])
        for fz, fval in ((2, b["z0"]), (2, b["z1"])):
            add(_sample_rect(rng, dens, fz, fval, 0, (b["x0"], b["x1"]),
                             1, (b["y0"], b["y1"])), b["label"])

    positions = np.concatenate(chunks, axis=0)
    lab = np.concatenate(labels, axis=0)
    colors = np.zeros((positions.shape[0], 3), dtype=np.float64)
    for code in PALETTE:
        sel = lab == int(code)
        if sel.any():
            colors[sel] = np.asarray(PALETTE[code], dtype=np.float64) / 255.0
    bounds = np.array([[-hx, -hy, -hz], [hx, hy, hz]], dtype=np.float64)
    return LabeledPointCloud(positions, colors, lab, bounds=bounds)


def add_depth_noise(maps, sigma, seed, near, far):
    """Gaussian depth jitter on observed pixels only, clamped to the
    valid range. Empty pixels stay exactly zero."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    depth = maps.depth.copy()
    valid = depth > 0
    if sigma > 0 and valid.any():
        noise = rng.normal(0.0, sigma, size=int(valid.sum()))
        depth[valid] = np.clip(depth[valid] + noise, near, far)
    return ViewMaps(depth=depth, color=maps.color.copy(),
                    seg=maps.seg.copy(), hole=maps.hole.copy())


def synth_input_view(cloud, view, camera, noise_sigma=0.01, seed=0,
                     splat_radius=1):
    """Render the ground truth from one viewpoint and perturb its depth,
    yielding the posed input observation."""
    maps = render_views(cloud, view, camera, splat_radius=splat_radius)
    return add_depth_noise(maps, noise_sigma, seed, camera.near, camera.far)


def frustum_crop(cloud, view, camera):
    """Restrict a cloud to points visible in a view's frustum: forward
    depth within [near, far] (closed) and pixel center on the image."""
    if len(cloud) == 0:
        return cloud
    rot = view.rotation()
    pc = (cloud.positions - view.position()) @ rot.T
    z = pc[:, 2]
    keep = (z >= camera.near) & (z <= camera.far)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.rint(camera.fx * pc[:, 0] / z + camera.cx)
        v = np.rint(camera.fy * pc[:, 1] / z + camera.cy)
    keep &= np.isfinite(u) & np.isfinite(v)
    keep &= (u >= 0) & (u <= camera.width - 1)
    keep &= (v >= 0) & (v <= camera.height - 1)
    return LabeledPointCloud(cloud.positions[keep], cloud.colors[keep],
                             cloud.labels[keep])


def standard_suite(n_scenes=10, density_per_m2=3500.0):
    """Fixed evaluation set: consecutive seeds at the stock density."""
    return [SceneSpec(seed=i, density_per_m2=density_per_m2)
            for i in range(n_scenes)]
