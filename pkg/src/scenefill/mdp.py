"""Episodic environment for progressive completion.

One episode: start from a single posed observation, then repeatedly pick
a viewpoint, render the partial cloud there, fill the holes, and merge
the filled pixels back in as labeled points. Rewards score map accuracy
against the reference render, point label accuracy against the reference
cloud, and hole shrinkage; an episode ends when the remaining hole area
drops under a fixed fraction of the initial area (bonus reward) or when
the step cap is hit.

The hole hull comes from the configured scene box, identical for every
view and step, so the total hole area never increases as points are
added and pixels near the box faces count as holes even when the input
view never observed that far.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .config import EngineConfig
from .inpaint import InpaintRequest, OracleInpainter, inpaint_view
from .render import ViewMaps, backproject, render_views
from .volume import (VolumeSpec, build_occupancy, complete_volume,
                     project_volume, sharpen_volume)


@dataclass
class RewardBreakdown:
    acc: float
    pcacc: float
    hole: float
    total: float
    terminal: bool
    omega: int
    hole_area: int
    n_new_points: int


@dataclass
class TraceRecord:
    """One JSONL row of an episode trace: the visited view's hole size,
    the reward terms, and the remaining total hole area."""

    step: int
    action: int
    omega: int
    r_acc: float
    r_pcacc: float
    r_hole: float
    r_total: float
    hole_area: int
    n_new_points: int
    done: bool

    def to_dict(self):
        return {
            "step": self.step, "action": self.action, "omega": self.omega,
            "r_acc": self.r_acc, "r_pcacc": self.r_pcacc,
            "r_hole": self.r_hole, "r_total": self.r_total,
            "hole_area": self.hole_area, "n_new_points": self.n_new_points,
            "done": self.done,
        }


@dataclass
class EpisodeState:
    cloud: object
    visited: np.ndarray
    step_idx: int
    area0: int
    area_now: int
    hole_masks: list
    hull_bounds: np.ndarray
    done: bool
    volume: object = field(default=None, repr=False)


def reward_acc(filled, gt_maps, mask, far):
    """Map agreement on the filled pixels, in [-1, 0]. Zero when nothing
    was filled."""
    if not mask.any():
        return 0.0
    d_term = float(np.abs(filled.depth[mask] - gt_maps.depth[mask]).mean()) / far
    i_term = float(np.abs(filled.color[mask] - gt_maps.color[mask]).mean())
    s_term = float((filled.seg[mask] != gt_maps.seg[mask]).mean())
    return -(d_term + i_term + s_term) / 3.0


def reward_hole(prev_area, now_area, area0):
    """Shrinkage reward in [-1, 0]; -1 means no progress this step."""
    if area0 <= 0:
        raise ValueError("area0 must be positive")
    return (prev_area - now_area) / area0 - 1.0


def reward_pcacc(new_cloud, gt_cloud, tree=None):
    """Fraction of new points whose label matches their nearest reference
    point. Vacuously 1 when no points were added."""
    if len(new_cloud) == 0:
        return 1.0
    if tree is None:
        tree = cKDTree(gt_cloud.positions)
    _, idx = tree.query(new_cloud.positions)
    return float((gt_cloud.labels[idx] == new_cloud.labels).mean())


def total_reward(acc, pcacc, hole, alpha, beta, gamma):
    return alpha * acc + beta * (pcacc - 1.0) + gamma * hole


class Environment:
    """Completion episodes over one reference scene.

    Reference renders and the reference KD-tree are cached on the
    environment since the scene never changes; the completed occupancy
    volume is cached per step on the episode state.
    """

    def __init__(self, gt_cloud, config=None, inpainter=None, camera=None,
                 input_maps=None, noise_seed=0):
        self.config = config if config is not None else EngineConfig()
        self.gt_cloud = gt_cloud
        self.camera = camera if camera is not None else self.config.camera()
        self.actions = self.config.actions()
        self.inpainter = inpainter if inpainter is not None else OracleInpainter()
        self.noise_seed = noise_seed
        self._given_input = input_maps
        self._gt_views = {}
        self._tree = None
        self.state = None

    @property
    def gt_tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.gt_cloud.positions)
        return self._tree

    def gt_view(self, index):
        """Reference render at action index (0 for the input view)."""
        if index not in self._gt_views:
            view = (self.config.input_view() if index == 0
                    else self.actions[index])
            self._gt_views[index] = render_views(
                self.gt_cloud, view, self.camera,
                splat_radius=self.config.splat_radius)
        return self._gt_views[index]

    def _input_maps(self):
        if self._given_input is not None:
            return self._given_input
        from .datagen import add_depth_noise
        clean = self.gt_view(0)
        return add_depth_noise(clean, self.config.noise_sigma_m,
                               self.noise_seed, self.camera.near,
                               self.camera.far)

    def _hole_masks(self, cloud, hull_bounds):
        masks = []
        for i in range(1, len(self.actions) + 1):
            maps = render_views(cloud, self.actions[i], self.camera,
                                splat_radius=self.config.splat_radius,
                                hull_bounds=hull_bounds, depth_only=True)
            masks.append(maps.hole)
        return masks

    def reset(self):
        maps = self._input_maps()
        seed_mask = maps.depth > 0
        cloud, _ = backproject(maps, seed_mask, self.config.input_view(),
                               self.camera)
        if len(cloud) == 0:
            raise ValueError("input view observes no valid points")
        lo = np.asarray(self.config.scene_box_min, dtype=np.float64)
        size = np.asarray(self.config.scene_box_size, dtype=np.float64)
        hull_bounds = np.stack([lo, lo + size])
        masks = self._hole_masks(cloud, hull_bounds)
        area0 = int(sum(int(m.sum()) for m in masks))
        self.state = EpisodeState(
            cloud=cloud, visited=np.zeros(len(self.actions), dtype=bool),
            step_idx=0, area0=area0, area_now=area0, hole_masks=masks,
            hull_bounds=hull_bounds, done=area0 == 0)
        return self.state

    def hole_counts(self):
        return np.array([int(m.sum()) for m in self.state.hole_masks],
                        dtype=np.int64)

    def completed_volume(self):
        st = self.state
        if st.volume is None:
            cfg = self.config
            spec = VolumeSpec(cfg.vol_dims, cfg.vol_voxel_m, cfg.vol_origin)
            raw = build_occupancy(st.cloud, spec,
                                  occupied_v=cfg.vol_occupied_v,
                                  empty_v=cfg.vol_empty_v)
            st.volume = complete_volume(raw, "morphological",
                                        occupied_v=cfg.vol_occupied_v)
        return st.volume

    def guided_depth_means(self, cap=None):
        """Per view: mean projected guide depth over (a subsample of) its
        hole pixels, scaled by the far plane. Zero for hole-free views."""
        cfg = self.config
        if cap is None:
            cap = cfg.feature_hole_samples
        vol = sharpen_volume(self.completed_volume())
        out = np.zeros(len(self.actions), dtype=np.float64)
        for i, mask in enumerate(self.state.hole_masks):
            ys, xs = np.nonzero(mask)
            n = ys.size
            if n == 0:
                continue
            if n > cap:
                pick = (np.arange(cap, dtype=np.int64) * n) // cap
                ys, xs = ys[pick], xs[pick]
            sub = np.zeros_like(mask)
            sub[ys, xs] = True
            depth, _ = project_volume(vol, self.actions[i + 1], self.camera,
                                      temperature=cfg.softmax_temperature,
                                      pixel_mask=sub)
            out[i] = float(depth[sub].mean()) / self.camera.far
        return out

    def step(self, action):
        """Visit one viewpoint; returns (state, breakdown, done)."""
        st = self.state
        if st is None:
            raise RuntimeError("reset() before step()")
        if st.done:
            raise RuntimeError("episode already finished")
        if not 1 <= action <= len(self.actions):
            raise ValueError(f"action out of range: {action}")
        cfg = self.config
        view = self.actions[action]
        maps = render_views(st.cloud, view, self.camera,
                            splat_radius=cfg.splat_radius,
                            hull_bounds=st.hull_bounds)
        guide_depth = guide_seg = None
        if self.inpainter.needs_guidance and maps.hole.any():
            vol = sharpen_volume(self.completed_volume())
            guide_depth, guide_seg = project_volume(
                vol, view, self.camera,
                temperature=cfg.softmax_temperature, pixel_mask=maps.hole)
        gt_maps = self.gt_view(action)
        req = InpaintRequest(maps=maps, near=self.camera.near,
                             far=self.camera.far, guide_depth=guide_depth,
                             guide_seg=guide_seg, gt_maps=gt_maps)
        filled = inpaint_view(req, self.inpainter)
        filled_maps = ViewMaps(depth=filled.depth, color=filled.color,
                               seg=filled.seg, hole=maps.hole.copy())
        new_cloud, _ = backproject(filled_maps, filled.filled, view,
                                   self.camera)

        r_a = reward_acc(filled_maps, gt_maps, filled.filled,
                         self.camera.far)
        r_p = reward_pcacc(new_cloud, self.gt_cloud, self.gt_tree)
        if len(new_cloud):
            st.cloud = st.cloud.merged(new_cloud)
            st.volume = None
        prev_area = st.area_now
        st.hole_masks = self._hole_masks(st.cloud, st.hull_bounds)
        st.area_now = int(sum(int(m.sum()) for m in st.hole_masks))
        r_h = reward_hole(prev_area, st.area_now, st.area0)
        assert -1.0 <= r_a <= 0.0 and 0.0 <= r_p <= 1.0
        assert -1.0 - 1e-12 <= r_h <= 0.0

        st.visited[action - 1] = True
        st.step_idx += 1
        terminal = st.area_now / st.area0 < cfg.termination_ratio
        if terminal:
            total = 1.0
        else:
            total = total_reward(r_a, r_p, r_h, cfg.alpha, cfg.beta,
                                 cfg.gamma)
            lo = -(cfg.alpha + cfg.beta + cfg.gamma)
            assert lo - 1e-12 <= total <= 1e-12
        st.done = terminal or st.step_idx >= cfg.step_cap
        breakdown = RewardBreakdown(acc=r_a, pcacc=r_p, hole=r_h,
                                    total=total, terminal=terminal,
                                    omega=int(maps.hole.sum()),
                                    hole_area=st.area_now,
                                    n_new_points=len(new_cloud))
        return st, breakdown, st.done
