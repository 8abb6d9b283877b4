"""Camera model and the two-ring view sphere around a scene.

View positions live on a sphere of radius ``a`` around the scene center,
parameterized by a polar angle theta measured from +y and an azimuth phi::

    p = center + (a sin(theta) sin(phi), a cos(theta), a sin(theta) cos(phi))

Every view looks at the center with world up = +y. The camera frame follows
the usual pinhole convention (x right, y down, z forward), so
``u = fx * x / z + cx`` and v grows downward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_THETAS = (90.0, 70.0)
DEFAULT_PHIS = (-50.0, -40.0, -30.0, -20.0, -10.0, 10.0, 20.0, 30.0, 40.0, 50.0)
_UP = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the valid depth range in meters."""

    fx: float = 518.857
    fy: float = 518.857
    cx: float = 319.5
    cy: float = 239.5
    width: int = 640
    height: int = 480
    near: float = 0.1
    far: float = 6.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def scaled(self, width, height):
        """Same field of view at a different resolution."""
        sx = width / self.width
        sy = height / self.height
        return CameraModel(self.fx * sx, self.fy * sy,
                           (self.cx + 0.5) * sx - 0.5, (self.cy + 0.5) * sy - 0.5,
                           width, height, self.near, self.far)


@dataclass(frozen=True)
class Viewpoint:
    """One camera pose on the view sphere, looking at the center."""

    theta_deg: float
    phi_deg: float
    radius: float
    center: tuple = (0.0, 0.0, 0.0)
    index: int = 0  # 1-based slot in the action space; 0 = not an action

    def position(self):
        th = np.deg2rad(self.theta_deg)
        ph = np.deg2rad(self.phi_deg)
        offset = np.array([
            self.radius * np.sin(th) * np.sin(ph),
            self.radius * np.cos(th),
            self.radius * np.sin(th) * np.cos(ph),
        ])
        return np.asarray(self.center, dtype=np.float64) + offset

    def rotation(self):
        """World-to-camera rotation; rows are the right/down/forward axes."""
        pos = self.position()
        f = np.asarray(self.center, dtype=np.float64) - pos
        nf = np.linalg.norm(f)
        if nf == 0:
            raise ValueError("viewpoint coincides with the scene center")
        f = f / nf
        x = np.cross(f, _UP)
        nx = np.linalg.norm(x)
        if nx < 1e-12:
            raise ValueError("view direction parallel to the up axis")
        x = x / nx
        y = np.cross(f, x)
        return np.stack([x, y, f])


@dataclass(frozen=True)
class ActionSpace:
    """Ordered tuple of candidate views; indices are 1-based."""

    views: tuple

    def __len__(self):
        return len(self.views)

    def __getitem__(self, index):
        """Fetch by 1-based action index."""
        if not 1 <= index <= len(self.views):
            raise IndexError(f"action index {index} outside 1..{len(self.views)}")
        return self.views[index - 1]


def generate_action_space(radius, center=(0.0, 0.0, 0.0),
                          thetas=DEFAULT_THETAS, phis=DEFAULT_PHIS):
    """Build the ordered view set: phi-major within each theta ring.

    With the defaults this yields 20 views, the equatorial ring (theta=90)
    first. Action 1 sits at [90, -50], action 20 at [70, 50].
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    views = []
    k = 1
    for th in thetas:
        for ph in phis:
            views.append(Viewpoint(float(th), float(ph), float(radius),
                                   tuple(float(c) for c in center), k))
            k += 1
    return ActionSpace(tuple(views))


def world_to_pixel(camera, view, point):
    """Project one world point; returns (u, v, z) or None when z <= 0."""
    p = np.asarray(point, dtype=np.float64)
    pc = view.rotation() @ (p - view.position())
    z = pc[2]
    if z <= 0:
        return None
    u = camera.fx * pc[0] / z + camera.cx
    v = camera.fy * pc[1] / z + camera.cy
    return float(u), float(v), float(z)


def pixel_to_world(camera, view, u, v, z):
    """Back-project pixel coordinates at depth z (meters, camera forward axis)."""
    if not camera.near <= z <= camera.far:
        raise ValueError(f"depth {z} outside [{camera.near}, {camera.far}]")
    pc = np.array([(u - camera.cx) / camera.fx * z,
                   (v - camera.cy) / camera.fy * z,
                   z])
    return view.rotation().T @ pc + view.position()


def project_points(camera, view, positions):
    """Vectorized projection. Returns (u, v, z) arrays; z <= 0 means behind."""
    rot = view.rotation()
    pc = (positions - view.position()) @ rot.T
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * pc[:, 0] / z + camera.cx
        v = camera.fy * pc[:, 1] / z + camera.cy
    return u, v, z
