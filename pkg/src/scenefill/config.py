"""Engine configuration.

All tunable constants live in one flat ``key = value`` file. Values are
parsed as int, float, bool, or comma-separated tuples of numbers; ``#``
starts a comment. Unknown keys are rejected so typos fail loudly.

Example::

    # camera
    fx = 518.857
    phi_deg = -50, -40, -30, -20, -10, 10, 20, 30, 40, 50
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .views import DEFAULT_PHIS, DEFAULT_THETAS, CameraModel, Viewpoint, generate_action_space


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    # camera intrinsics and depth range (meters)
    fx: float = 518.857
    fy: float = 518.857
    cx: float = 319.5
    cy: float = 239.5
    width: int = 640
    height: int = 480
    near_m: float = 0.1
    far_m: float = 6.0

    # view sphere
    radius_m: float = 3.0
    scene_center: tuple = (0.0, 0.0, 0.0)
    theta_deg: tuple = DEFAULT_THETAS
    phi_deg: tuple = DEFAULT_PHIS
    v0_theta_deg: float = 90.0
    v0_phi_deg: float = 0.0

    # renderer
    splat_radius: int = 1

    # scene box (meters): min corner and size
    scene_box_min: tuple = (-2.4, -1.22, -2.4)
    scene_box_size: tuple = (4.8, 2.44, 4.8)

    # occupancy volume
    vol_dims: tuple = (60, 36, 60)
    vol_voxel_m: float = 0.08
    vol_origin: tuple = (-2.4, -1.44, -2.4)
    vol_occupied_v: float = 0.05
    vol_empty_v: float = 0.95
    softmax_temperature: float = 1.0

    # episode reward weights and termination
    alpha: float = 0.05
    beta: float = 1.0
    gamma: float = 0.1
    termination_ratio: float = 0.07
    step_cap: int = 20

    # learners
    discount: float = 0.9
    lr_actor: float = 0.01
    lr_critic: float = 0.01
    lr_q: float = 0.01
    grad_clip: float = 10.0
    n_workers: int = 3
    episodes: int = 150
    replay_capacity: int = 10000
    batch_size: int = 32
    target_refresh: int = 50
    eps_start: float = 1.0
    eps_end: float = 0.1
    feature_hole_samples: int = 2048
    mask_visited: bool = False

    # inpainting
    diffusion_tol: float = 1e-4
    diffusion_iters: int = 500
    guide_mass_threshold: float = 0.5

    # synthetic data
    density_per_m2: float = 3500.0
    furniture_min: int = 2
    furniture_max: int = 4
    furniture_labels: tuple = (5, 6, 7, 8, 9, 10, 11)
    noise_sigma_m: float = 0.01

    # evaluation
    iou_edges: tuple = (0.08, 0.06, 0.04, 0.02, 0.01)
    completeness_radii: tuple = (0.02, 0.04, 0.06, 0.08, 0.10)

    seed: int = 0

    def __post_init__(self):
        labs = self.furniture_labels
        if not labs or any(int(c) != c or not 1 <= c <= 11 for c in labs):
            raise ConfigError(
                f"furniture_labels must be class codes in 1..11, got {labs}")

    def camera(self) -> CameraModel:
        return CameraModel(self.fx, self.fy, self.cx, self.cy,
                           self.width, self.height, self.near_m, self.far_m)

    def actions(self):
        return generate_action_space(self.radius_m, self.scene_center,
                                     self.theta_deg, self.phi_deg)

    def input_view(self) -> Viewpoint:
        return Viewpoint(self.v0_theta_deg, self.v0_phi_deg,
                         self.radius_m, tuple(self.scene_center), 0)


_FIELDS = {f.name: f for f in dataclasses.fields(EngineConfig)}
_DEFAULTS = EngineConfig()


def _parse_scalar(tok):
    tok = tok.strip()
    low = tok.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        return tok


def _coerce(name, value):
    want = type(getattr(_DEFAULTS, name))
    if want is tuple:
        if not isinstance(value, tuple):
            value = (value,)
        default = getattr(_DEFAULTS, name)
        if default and isinstance(default[0], int):
            out = []
            for v in value:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{name} expects integers, got {v!r}")
                if isinstance(v, float) and not v.is_integer():
                    raise ConfigError(f"{name} expects integers, got {v!r}")
                out.append(int(v))
            return tuple(out)
        return tuple(float(v) for v in value)
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name} expects true/false, got {value!r}")
        return value
    if want is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} expects an integer, got {value!r}")
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{name} expects an integer, got {value!r}")
        return int(value)
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} expects a number, got {value!r}")
        return float(value)
    return value


def load_config(path=None, overrides=None):
    """Read a config file (optional) and apply override pairs on top."""
    values = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        for lineno, raw in enumerate(text.split("\n"), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, rhs = line.partition("=")
            key = key.strip()
            if key not in _FIELDS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            toks = [t for t in rhs.split(",") if t.strip() != ""]
            if not toks:
                raise ConfigError(f"{path}:{lineno}: empty value for {key!r}")
            parsed = [_parse_scalar(t) for t in toks]
            value = tuple(parsed) if len(parsed) > 1 else parsed[0]
            values[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, value)
    try:
        return EngineConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def write_config(config, path):
    """Dump every field as 'key = value' lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for f in dataclasses.fields(EngineConfig):
            v = getattr(config, f.name)
            if isinstance(v, tuple):
                fh.write(f"{f.name} = {', '.join(repr(x) for x in v)}\n")
            elif isinstance(v, bool):
                fh.write(f"{f.name} = {'true' if v else 'false'}\n")
            else:
                fh.write(f"{f.name} = {v!r}\n")
