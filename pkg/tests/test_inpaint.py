import numpy as np
import pytest

from scenefill.inpaint import (DiffusionInpainter, InpaintRequest,
                               OracleInpainter, UnfillableError,
                               VolumeGuidedInpainter, baseline_diffusion,
                               diffusion_fill, inpaint_view,
                               nearest_label_fill, oracle_fill)
from scenefill.render import ViewMaps


def _maps(depth, seg, hole, color=None):
    depth = np.asarray(depth, dtype=np.float64)
    seg = np.asarray(seg, dtype=np.uint8)
    hole = np.asarray(hole, dtype=bool)
    if color is None:
        color = np.zeros(depth.shape + (3,))
    return ViewMaps(depth, np.asarray(color, dtype=np.float64), seg, hole)


class TestDiffusionFill:
    def test_single_pixel_four_neighbor_mean(self):
        depth = np.array([[5.0, 1.0, 5.0],
                          [2.0, 0.0, 2.0],
                          [5.0, 1.0, 5.0]])
        omega = np.zeros((3, 3), dtype=bool)
        omega[1, 1] = True
        known = ~omega
        out, unfilled = diffusion_fill(depth, omega, known)
        assert out[1, 1] == pytest.approx(1.5, abs=1e-12)
        assert not unfilled.any()
        assert np.array_equal(out[known], depth[known])

    def test_maximum_principle(self):
        rng = np.random.default_rng(0)
        vals = rng.uniform(3.0, 7.0, size=(20, 20))
        omega = np.zeros((20, 20), dtype=bool)
        omega[5:15, 5:15] = True
        vals[omega] = 0.0
        out, unfilled = diffusion_fill(vals, omega, ~omega)
        assert not unfilled.any()
        assert out[omega].min() >= 3.0 - 1e-12
        assert out[omega].max() <= 7.0 + 1e-12

    def test_converges_to_linear_profile(self):
        # columns 0 and 6 fixed at 0 and 6; dead rows above and below act
        # as no-flux borders, so the harmonic fill is linear in x
        h, w = 3, 7
        vals = np.zeros((h, w))
        vals[:, 6] = 6.0
        known = np.zeros((h, w), dtype=bool)
        known[:, 0] = known[:, 6] = True
        omega = np.zeros((h, w), dtype=bool)
        omega[:, 1:6] = True
        out, _ = diffusion_fill(vals, omega, known, tol=1e-10, max_iter=5000)
        expect = np.tile(np.arange(7.0), (3, 1))
        assert np.allclose(out, expect, atol=1e-6)

    def test_component_without_boundary_reported_unfilled(self):
        # known strip, a dead column, then holes: nothing to diffuse from
        vals = np.ones((3, 5))
        known = np.zeros((3, 5), dtype=bool)
        known[:, 0] = True
        omega = np.zeros((3, 5), dtype=bool)
        omega[:, 2:] = True
        out, unfilled = diffusion_fill(vals, omega, known)
        assert np.array_equal(unfilled, omega)
        assert np.array_equal(out, vals)

    def test_mixed_components_filled_and_reported(self):
        vals = np.zeros((3, 7))
        vals[:, 0] = 4.0
        known = np.zeros((3, 7), dtype=bool)
        known[:, 0] = True
        omega = np.zeros((3, 7), dtype=bool)
        omega[:, 1] = True   # touches known
        omega[:, 4] = True   # separated by dead column 2..3
        out, unfilled = diffusion_fill(vals, omega, known)
        assert not unfilled[:, 1].any()
        assert unfilled[:, 4].all()
        assert np.allclose(out[:, 1], 4.0, atol=1e-6)

    def test_no_known_pixels_raises(self):
        with pytest.raises(UnfillableError):
            diffusion_fill(np.ones((3, 3)), np.ones((3, 3), dtype=bool),
                           np.zeros((3, 3), dtype=bool))

    def test_multichannel(self):
        vals = np.zeros((3, 3, 3))
        vals[..., 0] = 1.0
        vals[..., 1] = 0.5
        omega = np.zeros((3, 3), dtype=bool)
        omega[1, 1] = True
        vals[1, 1] = 0.0
        out, _ = diffusion_fill(vals, omega, ~omega)
        assert np.allclose(out[1, 1], [1.0, 0.5, 0.0], atol=1e-12)


class TestNearestLabelFill:
    def test_copies_nearest_known_label(self):
        seg = np.array([[2, 2, 255, 255, 7]] * 3, dtype=np.uint8)
        omega = np.zeros((3, 5), dtype=bool)
        omega[:, 2:4] = True
        known = ~omega
        out = nearest_label_fill(seg, omega, known)
        assert (out[:, 2] == 2).all()
        assert (out[:, 3] == 7).all()
        assert np.array_equal(out[known], seg[known])

    def test_no_known_raises(self):
        with pytest.raises(UnfillableError):
            nearest_label_fill(np.full((2, 2), 255, dtype=np.uint8),
                               np.ones((2, 2), dtype=bool),
                               np.zeros((2, 2), dtype=bool))

    def test_baseline_routes_labels_to_nearest(self):
        seg = np.array([[3, 255, 9]] * 2, dtype=np.uint8)
        omega = np.zeros((2, 3), dtype=bool)
        omega[:, 1] = True
        a = baseline_diffusion(seg, omega, is_label=True)
        b = nearest_label_fill(seg, omega, ~omega)
        assert np.array_equal(a, b)


def _ring_hole_maps(ring_depth=2.0, ring_seg=3):
    """5x5 view: known ring, 3x3 hole block in the middle."""
    depth = np.full((5, 5), ring_depth)
    seg = np.full((5, 5), ring_seg, dtype=np.uint8)
    color = np.tile([0.2, 0.4, 0.6], (5, 5, 1))
    hole = np.zeros((5, 5), dtype=bool)
    hole[1:4, 1:4] = True
    depth[hole] = 0.0
    seg[hole] = 255
    color[hole] = 0.0
    return _maps(depth, seg, hole, color)


class TestInpaintView:
    def test_diffusion_fills_ring_hole(self):
        req = InpaintRequest(_ring_hole_maps(), near=0.1, far=6.0)
        out = inpaint_view(req, DiffusionInpainter())
        hole = req.maps.hole
        assert out.filled[hole].all()
        assert np.allclose(out.depth[hole], 2.0, atol=1e-6)
        assert (out.seg[hole] == 3).all()
        assert np.allclose(out.color[hole], [0.2, 0.4, 0.6], atol=1e-6)

    def test_known_pixels_preserved_bit_exactly(self):
        maps = _ring_hole_maps()
        req = InpaintRequest(maps, near=0.1, far=6.0)
        out = inpaint_view(req, DiffusionInpainter())
        keep = ~maps.hole
        assert np.array_equal(out.depth[keep], maps.depth[keep])
        assert np.array_equal(out.seg[keep], maps.seg[keep])
        assert np.array_equal(out.color[keep], maps.color[keep])

    def test_empty_hole_early_return(self):
        maps = _ring_hole_maps()
        maps.hole[:] = False
        req = InpaintRequest(maps, near=0.1, far=6.0)
        out = inpaint_view(req, DiffusionInpainter())
        assert not out.filled.any()
        assert np.array_equal(out.depth, maps.depth)

    def test_view_with_no_data_is_absorbed(self):
        depth = np.zeros((4, 4))
        seg = np.full((4, 4), 255, dtype=np.uint8)
        hole = np.ones((4, 4), dtype=bool)
        req = InpaintRequest(_maps(depth, seg, hole), near=0.1, far=6.0)
        out = inpaint_view(req, DiffusionInpainter())
        assert not out.filled.any()
        assert not out.depth.any()
        assert (out.seg == 255).all()

    def test_out_of_range_depth_reverts_to_sentinels(self):
        # ring depth diffuses to ~8, beyond far=6: pixels must not count
        maps = _ring_hole_maps(ring_depth=8.0)
        req = InpaintRequest(maps, near=0.1, far=6.0)
        out = inpaint_view(req, DiffusionInpainter())
        hole = maps.hole
        assert not out.filled[hole].any()
        assert not out.depth[hole].any()
        assert (out.seg[hole] == 255).all()


class TestVolumeGuidedInpainter:
    def _guided_request(self, conf_mass=0.9, guide_depth_val=2.5):
        maps = _ring_hole_maps()
        guide_depth = np.zeros((5, 5))
        guide_seg = np.zeros((5, 5, 11))
        conf = np.zeros((5, 5), dtype=bool)
        conf[1:3, 1:4] = True   # top two hole rows confident
        guide_seg[conf, 6] = conf_mass
        guide_depth[conf] = guide_depth_val
        return InpaintRequest(maps, 0.1, 6.0, guide_depth, guide_seg), conf

    def test_confident_pixels_copy_guidance(self):
        req, conf = self._guided_request()
        out = inpaint_view(req, VolumeGuidedInpainter(mass_threshold=0.5))
        assert (out.seg[conf] == 7).all()
        assert np.allclose(out.depth[conf], 2.5, atol=1e-12)

    def test_unconfident_pixels_fall_back_to_diffusion(self):
        req, conf = self._guided_request()
        out = inpaint_view(req, VolumeGuidedInpainter(mass_threshold=0.5))
        rest = req.maps.hole & ~conf
        assert (out.seg[rest] == 3).all()
        assert np.allclose(out.depth[rest], 2.0, atol=1e-6)
        assert out.filled[req.maps.hole].all()

    def test_mass_below_threshold_ignores_guidance(self):
        req, conf = self._guided_request(conf_mass=0.3)
        out = inpaint_view(req, VolumeGuidedInpainter(mass_threshold=0.5))
        assert (out.seg[req.maps.hole] == 3).all()
        assert np.allclose(out.depth[req.maps.hole], 2.0, atol=1e-6)

    def test_out_of_range_guide_depth_falls_back(self):
        req, conf = self._guided_request(guide_depth_val=7.5)
        out = inpaint_view(req, VolumeGuidedInpainter(mass_threshold=0.5))
        # label guidance still applies; depth reverts to diffusion
        assert (out.seg[conf] == 7).all()
        assert np.allclose(out.depth[conf], 2.0, atol=1e-6)

    def test_color_uses_per_label_means(self):
        maps = _ring_hole_maps()
        maps.color[0, :] = [1.0, 0.0, 0.0]
        req, conf = self._guided_request(conf_mass=0.0)
        req = InpaintRequest(maps, 0.1, 6.0, req.guide_depth, req.guide_seg)
        out = inpaint_view(req, VolumeGuidedInpainter(mass_threshold=0.5))
        # every hole pixel takes label 3, whose known mean mixes the ring
        known = ~maps.hole
        mean = maps.color[known & (maps.seg == 3)].mean(axis=0)
        assert np.allclose(out.color[maps.hole], mean, atol=1e-12)

    def test_missing_guidance_rejected(self):
        req = InpaintRequest(_ring_hole_maps(), 0.1, 6.0)
        with pytest.raises(ValueError):
            VolumeGuidedInpainter().fill_seg(req)


class TestOracleInpainter:
    def test_copies_reference_in_holes_only(self):
        maps = _ring_hole_maps()
        gt_depth = np.full((5, 5), 3.3)
        gt_seg = np.full((5, 5), 9, dtype=np.uint8)
        gt_color = np.tile([0.9, 0.1, 0.5], (5, 5, 1))
        gt = _maps(gt_depth, gt_seg, np.zeros((5, 5), dtype=bool), gt_color)
        req = InpaintRequest(maps, 0.1, 6.0, gt_maps=gt)
        out = inpaint_view(req, OracleInpainter())
        hole = maps.hole
        assert np.allclose(out.depth[hole], 3.3)
        assert (out.seg[hole] == 9).all()
        assert np.allclose(out.color[hole], [0.9, 0.1, 0.5])
        assert np.array_equal(out.depth[~hole], maps.depth[~hole])

    def test_reference_gaps_stay_unfilled(self):
        maps = _ring_hole_maps()
        gt_depth = np.zeros((5, 5))
        gt_seg = np.full((5, 5), 255, dtype=np.uint8)
        gt = _maps(gt_depth, gt_seg, np.zeros((5, 5), dtype=bool))
        req = InpaintRequest(maps, 0.1, 6.0, gt_maps=gt)
        out = inpaint_view(req, OracleInpainter())
        assert not out.filled.any()
        assert (out.seg[maps.hole] == 255).all()

    def test_oracle_fill_validates_geometry(self):
        maps = _ring_hole_maps()
        req = InpaintRequest(maps, 0.1, 6.0)
        bad = _maps(np.zeros((4, 4)), np.full((4, 4), 255, np.uint8),
                    np.zeros((4, 4), dtype=bool))
        with pytest.raises(ValueError):
            oracle_fill(req, bad)

    def test_missing_reference_rejected(self):
        req = InpaintRequest(_ring_hole_maps(), 0.1, 6.0)
        with pytest.raises(ValueError):
            OracleInpainter().fill_seg(req)


class TestRequestValidation:
    def test_guide_shape_mismatch(self):
        maps = _ring_hole_maps()
        with pytest.raises(ValueError):
            InpaintRequest(maps, 0.1, 6.0, guide_depth=np.zeros((4, 4)))
        with pytest.raises(ValueError):
            InpaintRequest(maps, 0.1, 6.0, guide_seg=np.zeros((5, 5, 3)))
