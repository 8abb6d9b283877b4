"""Hole filling for rendered view maps.

Filling runs in a fixed stage order: segmentation first, then depth, then
color, so later stages can condition on the completed label map. Outside the
hole set every channel is preserved bit-exactly. Three fillers are provided:

* diffusion: Jacobi neighbor averaging to tolerance over the hole set with
  known pixels as Dirichlet boundary; labels take the nearest known label.
* volume-guided: copies the projected occupancy volume's expected depth and
  argmax class where the projection is confident, diffusion elsewhere;
  colors take the mean known color of the predicted class.
* oracle: copies reference maps inside the holes (upper bound / debugging).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import NUM_CLASSES, UNKNOWN_SEG
from .render import ViewMaps


class UnfillableError(RuntimeError):
    """No known pixels exist to propagate from."""


@dataclass
class InpaintRequest:
    """One view's maps plus optional guidance and reference channels.

    guide_depth / guide_seg come from projecting a completed occupancy
    volume ((H, W) and (H, W, 11)); they may be populated only inside the
    hole set. gt_maps carries reference maps for the oracle filler.
    """

    maps: ViewMaps
    near: float
    far: float
    guide_depth: np.ndarray | None = None
    guide_seg: np.ndarray | None = None
    gt_maps: ViewMaps | None = None

    def __post_init__(self):
        shape = self.maps.depth.shape
        for name in ("guide_depth",):
            arr = getattr(self, name)
            if arr is not None and arr.shape != shape:
                raise ValueError(f"{name} geometry disagrees with maps")
        if self.guide_seg is not None and self.guide_seg.shape != shape + (NUM_CLASSES,):
            raise ValueError("guide_seg geometry disagrees with maps")
        if self.gt_maps is not None and self.gt_maps.depth.shape != shape:
            raise ValueError("gt_maps geometry disagrees with maps")


@dataclass
class InpaintedMaps:
    """Filled channels plus the mask of holes that actually got values."""

    depth: np.ndarray
    color: np.ndarray
    seg: np.ndarray
    filled: np.ndarray


def _hole_components(omega):
    lab, n = ndimage.label(omega)  # 4-connectivity, matching the stencil
    return lab, n


def diffusion_fill(values, omega, known, tol=1e-4, max_iter=500):
    """Jacobi averaging over ``omega`` with ``known`` pixels as boundary.

    values: (H, W) or (H, W, C) float array; entries under ``known`` are the
    Dirichlet data. Hole components with no known 4-neighbour anywhere on
    their border cannot be filled and are reported back.

    Returns:
        (filled values, unfilled mask)

    Raises:
        UnfillableError: when no known pixel exists at all.
    """
    if not known.any():
        raise UnfillableError("no known pixels to diffuse from")
    omega = omega & ~known
    out = np.array(values, dtype=np.float64, copy=True)
    if not omega.any():
        return out, np.zeros_like(omega)
    scalar = out.ndim == 2
    if scalar:
        out = out[..., None]

    comp, n_comp = _hole_components(omega)

    def shifted(a, dy, dx, fill=0.0):
        b = np.full_like(a, fill)
        h, w = a.shape[:2]
        b[max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)] = \
            a[max(-dy, 0):h + min(-dy, 0), max(-dx, 0):w + min(-dx, 0)]
        return b

    # Dirichlet data adjacent to each component, gathered per stencil arm;
    # a component with no known 4-neighbour anywhere is unfillable
    sums = np.zeros((n_comp + 1, out.shape[-1]))
    cnts = np.zeros(n_comp + 1)
    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb_known = shifted(known, dy, dx, fill=False)
        sel = omega & nb_known
        if not sel.any():
            continue
        cnts += np.bincount(comp[sel], minlength=n_comp + 1)
        nb_val = np.stack([shifted(out[..., c], dy, dx) for c in range(out.shape[-1])],
                          axis=-1)
        for c in range(out.shape[-1]):
            sums[:, c] += np.bincount(comp[sel], weights=nb_val[sel][:, c],
                                      minlength=n_comp + 1)
    fillable_comp = cnts > 0
    fillable_comp[0] = False
    unfilled = omega & ~fillable_comp[comp]
    solve = omega & fillable_comp[comp]
    if not solve.any():
        return (out[..., 0], unfilled) if scalar else (out, unfilled)

    # start each component at its boundary mean: every Jacobi iterate then
    # stays inside the boundary's [min, max] (discrete maximum principle)
    means = np.zeros_like(sums)
    means[fillable_comp] = sums[fillable_comp] / cnts[fillable_comp, None]
    out[solve] = means[comp[solve]]

    ys, xs = np.nonzero(solve)
    y0, y1 = max(ys.min() - 1, 0), min(ys.max() + 2, omega.shape[0])
    x0, x1 = max(xs.min() - 1, 0), min(xs.max() + 2, omega.shape[1])
    win = np.s_[y0:y1, x0:x1]
    val = out[win]
    sol = solve[win]
    weight = (known | solve)[win].astype(np.float64)[..., None]

    for _ in range(max_iter):
        num = np.zeros_like(val)
        den = np.zeros_like(weight)
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            num += shifted(val * weight, dy, dx)
            den += shifted(weight, dy, dx)
        upd = den[..., 0] > 0
        new = np.where((sol & upd)[..., None], num / np.maximum(den, 1.0), val)
        delta = np.abs(new - val)[sol].max() if sol.any() else 0.0
        val = new
        if delta < tol:
            break
    out[win] = val
    if scalar:
        out = out[..., 0]
    out = np.asarray(out)
    result = np.array(values, dtype=np.float64, copy=True)
    result[solve] = out[solve]
    return result, unfilled


def nearest_label_fill(seg, omega, known):
    """Assign each hole pixel the label of its nearest known pixel."""
    if not known.any():
        raise UnfillableError("no known labels to propagate")
    _, (iy, ix) = ndimage.distance_transform_edt(~known, return_indices=True)
    out = seg.copy()
    out[omega] = seg[iy[omega], ix[omega]]
    return out


def baseline_diffusion(channel, omega, known=None, is_label=False,
                       tol=1e-4, max_iter=500):
    """Reference single-channel filler.

    Scalar channels diffuse (Jacobi, Dirichlet boundary); label channels
    copy the nearest known label instead of averaging codes.
    """
    if known is None:
        known = ~omega
    if is_label:
        return nearest_label_fill(channel, omega, known)
    filled, _ = diffusion_fill(channel, omega, known, tol, max_iter)
    return filled


class DiffusionInpainter:
    """Stage fillers built purely from in-view neighbor structure."""

    needs_guidance = False

    def __init__(self, tol=1e-4, max_iter=500):
        self.tol = tol
        self.max_iter = max_iter

    def fill_seg(self, req):
        known = ~req.maps.hole & (req.maps.seg != UNKNOWN_SEG)
        return nearest_label_fill(req.maps.seg, req.maps.hole, known)

    def fill_depth(self, req, seg_hat):
        known = ~req.maps.hole & (req.maps.depth > 0)
        filled, unfilled = diffusion_fill(req.maps.depth, req.maps.hole, known,
                                          self.tol, self.max_iter)
        filled[unfilled] = 0.0
        return filled

    def fill_color(self, req, seg_hat):
        known = ~req.maps.hole & (req.maps.seg != UNKNOWN_SEG)
        filled, _ = diffusion_fill(req.maps.color, req.maps.hole, known,
                                   self.tol, self.max_iter)
        return filled


class VolumeGuidedInpainter:
    """Copies confident volume projections, falls back to diffusion."""

    needs_guidance = True

    def __init__(self, mass_threshold=0.5, tol=1e-4, max_iter=500):
        self.mass_threshold = mass_threshold
        self._diffusion = DiffusionInpainter(tol, max_iter)

    def _confident(self, req):
        if req.guide_seg is None or req.guide_depth is None:
            raise ValueError("volume-guided filling needs guidance maps")
        return req.guide_seg.sum(axis=-1) > self.mass_threshold

    def fill_seg(self, req):
        seg = self._diffusion.fill_seg(req)
        conf = self._confident(req) & req.maps.hole
        seg[conf] = req.guide_seg.argmax(axis=-1)[conf].astype(np.uint8) + 1
        return seg

    def fill_depth(self, req, seg_hat):
        omega = req.maps.hole
        conf = self._confident(req) & omega
        valid = conf & (req.guide_depth >= req.near) & (req.guide_depth <= req.far)
        rest = omega & ~valid
        if rest.any():
            depth = self._diffusion.fill_depth(req, seg_hat)
        else:
            depth = req.maps.depth.copy()
        depth[valid] = req.guide_depth[valid]
        return depth

    def fill_color(self, req, seg_hat):
        omega = req.maps.hole
        known = ~omega & (req.maps.seg != UNKNOWN_SEG)
        color = None
        out = req.maps.color.copy()
        pending = omega.copy()
        for code in np.unique(seg_hat[omega]):
            if not 1 <= code <= NUM_CLASSES:
                continue
            same = known & (req.maps.seg == code)
            if not same.any():
                continue
            sel = omega & (seg_hat == code)
            out[sel] = req.maps.color[same].mean(axis=0)
            pending &= ~sel
        if pending.any():
            if color is None:
                color = self._diffusion.fill_color(req, seg_hat)
            out[pending] = color[pending]
        return out


class OracleInpainter:
    """Copies the request's reference maps inside the holes."""

    needs_guidance = False

    def fill_seg(self, req):
        if req.gt_maps is None:
            raise ValueError("oracle filling needs reference maps")
        seg = req.maps.seg.copy()
        seg[req.maps.hole] = req.gt_maps.seg[req.maps.hole]
        return seg

    def fill_depth(self, req, seg_hat):
        depth = req.maps.depth.copy()
        depth[req.maps.hole] = req.gt_maps.depth[req.maps.hole]
        return depth

    def fill_color(self, req, seg_hat):
        color = req.maps.color.copy()
        color[req.maps.hole] = req.gt_maps.color[req.maps.hole]
        return color


def oracle_fill(req, gt_maps):
    """Functional form of OracleInpainter for one-off use."""
    if gt_maps.depth.shape != req.maps.depth.shape:
        raise ValueError("reference maps geometry disagrees with request")
    req = InpaintRequest(req.maps, req.near, req.far, req.guide_depth,
                         req.guide_seg, gt_maps)
    return inpaint_view(req, OracleInpainter())


def inpaint_view(req, inpainter):
    """Fill one view's holes with the given inpainter, stages in order.

    Known pixels are preserved bit-exactly. Hole pixels the inpainter could
    not fill keep the empty sentinels (depth 0, seg 255) and are excluded
    from the returned ``filled`` mask.
    """
    omega = req.maps.hole
    depth = req.maps.depth.copy()
    color = req.maps.color.copy()
    seg = req.maps.seg.copy()
    if not omega.any():
        return InpaintedMaps(depth, color, seg, np.zeros_like(omega))
    try:
        seg_hat = inpainter.fill_seg(req)
        depth_hat = inpainter.fill_depth(req, seg_hat)
        color_hat = inpainter.fill_color(req, seg_hat)
    except UnfillableError:
        return InpaintedMaps(depth, color, seg, np.zeros_like(omega))
    seg[omega] = seg_hat[omega]
    depth[omega] = depth_hat[omega]
    color[omega] = np.clip(color_hat[omega], 0.0, 1.0)
    filled = omega & (depth >= req.near) & (depth <= req.far) \
        & (seg >= 1) & (seg <= NUM_CLASSES)
    bad = omega & ~filled
    depth[bad] = 0.0
    seg[bad] = UNKNOWN_SEG
    return InpaintedMaps(depth, color, seg, filled)
