import numpy as np
import pytest

from scenefill.views import (CameraModel, Viewpoint, generate_action_space,
                             pixel_to_world, project_points, world_to_pixel)


class TestCameraModel:
    def test_defaults(self):
        cam = CameraModel()
        assert cam.fx == cam.fy == 518.857
        assert (cam.cx, cam.cy) == (319.5, 239.5)
        assert (cam.width, cam.height) == (640, 480)
        assert (cam.near, cam.far) == (0.1, 6.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            CameraModel(fx=0.0)
        with pytest.raises(ValueError):
            CameraModel(near=2.0, far=1.0)

    def test_scaled_preserves_field_of_view(self):
        cam = CameraModel()
        small = cam.scaled(80, 60)
        # half-angle of view: atan((W/2)/fx) must be unchanged
        assert np.isclose(np.arctan(cam.width / 2 / cam.fx),
                          np.arctan(small.width / 2 / small.fx))
        assert np.isclose(np.arctan(cam.height / 2 / cam.fy),
                          np.arctan(small.height / 2 / small.fy))


class TestActionSpace:
    def setup_method(self):
        self.acts = generate_action_space(3.0, (0.0, 0.0, 0.0))

    def test_exactly_20_views_10_per_ring(self):
        assert len(self.acts) == 20
        thetas = [v.theta_deg for v in self.acts.views]
        assert thetas[:10] == [90.0] * 10
        assert thetas[10:] == [70.0] * 10

    def test_phi_major_order_within_each_ring(self):
        phis = [v.phi_deg for v in self.acts.views]
        ring = [-50.0, -40.0, -30.0, -20.0, -10.0, 10.0, 20.0, 30.0, 40.0, 50.0]
        assert phis == ring + ring

    def test_anchor_positions(self):
        # evaluate the sphere parameterization by hand: the equatorial ring
        # first at phi=-50, then the elevated ring; all at radius 3
        c1 = self.acts[1]
        assert (c1.theta_deg, c1.phi_deg) == (90.0, -50.0)
        assert np.allclose(c1.position(), (-2.2981, 0.0, 1.9284), atol=2e-4)
        c2 = self.acts[2]
        assert (c2.theta_deg, c2.phi_deg) == (90.0, -40.0)
        c12 = self.acts[12]
        assert (c12.theta_deg, c12.phi_deg) == (70.0, -40.0)
        c20 = self.acts[20]
        assert (c20.theta_deg, c20.phi_deg) == (70.0, 50.0)
        assert np.allclose(c20.position(), (2.1595, 1.0261, 1.8120),
                           atol=2e-4)

    def test_positions_satisfy_parameterization_exactly(self):
        for v in self.acts.views:
            th = np.deg2rad(v.theta_deg)
            ph = np.deg2rad(v.phi_deg)
            expect = 3.0 * np.array([np.sin(th) * np.sin(ph), np.cos(th),
                                     np.sin(th) * np.cos(ph)])
            assert np.allclose(v.position(), expect, atol=1e-12)

    def test_all_views_at_radius(self):
        for v in self.acts.views:
            assert abs(np.linalg.norm(v.position()) - 3.0) < 1e-9

    def test_exact_look_at(self):
        for v in self.acts.views:
            rot = v.rotation()
            fwd = rot[2]
            to_center = -np.asarray(v.position())
            assert np.isclose(fwd @ to_center, np.linalg.norm(to_center),
                              atol=1e-12)

    def test_rotations_proper_orthonormal(self):
        for v in self.acts.views:
            rot = v.rotation()
            assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)
            assert np.isclose(np.linalg.det(rot), 1.0, atol=1e-12)

    def test_up_is_plus_y(self):
        # image "down" axis must have a non-positive world-y component so
        # +y appears up in the image
        for v in self.acts.views:
            assert v.rotation()[1] @ np.array([0.0, 1.0, 0.0]) <= 1e-12

    def test_nonpositive_radius_rejected(self):
        with pytest.raises(ValueError):
            generate_action_space(0.0, (0, 0, 0))

    def test_indexing_is_one_based(self):
        assert self.acts[1].index == 1
        assert self.acts[20].index == 20
        with pytest.raises(IndexError):
            self.acts[0]
        with pytest.raises(IndexError):
            self.acts[21]

    def test_custom_center_offsets_positions(self):
        acts = generate_action_space(3.0, (1.0, 2.0, 3.0))
        assert np.allclose(acts[1].position(),
                           np.asarray(self.acts[1].position()) + (1, 2, 3))


class TestProjection:
    def setup_method(self):
        self.cam = CameraModel()
        self.view = Viewpoint(90.0, 0.0, 3.0, (0.0, 0.0, 0.0))

    def test_center_projects_to_principal_point(self):
        res = world_to_pixel(self.cam, self.view, (0.0, 0.0, 0.0))
        assert res is not None
        u, v, z = res
        assert (u, v) == pytest.approx((self.cam.cx, self.cam.cy), abs=1e-9)
        assert z == pytest.approx(3.0, abs=1e-12)

    def test_point_at_camera_is_behind_marker(self):
        assert world_to_pixel(self.cam, self.view,
                              self.view.position()) is None

    def test_behind_camera_marker(self):
        assert world_to_pixel(self.cam, self.view, (0.0, 0.0, 4.0)) is None

    def test_offset_along_camera_right(self):
        # 0.1 m along the camera right axis at depth 3:
        # u - cx = 518.857 * 0.1 / 3 = 17.295
        rot = self.view.rotation()
        p = np.asarray(self.view.position()) + rot[2] * 3.0 + rot[0] * 0.1
        u, v, z = world_to_pixel(self.cam, self.view, p)
        assert u - self.cam.cx == pytest.approx(17.295, abs=5e-4)
        assert u - self.cam.cx == pytest.approx(518.857 * 0.1 / 3, rel=1e-12)

    def test_pixel_to_world_inverse_of_center(self):
        p = pixel_to_world(self.cam, self.view, self.cam.cx, self.cam.cy, 3.0)
        assert np.allclose(p, (0.0, 0.0, 0.0), atol=1e-12)

    def test_round_trip_1000_random_pixels(self):
        rng = np.random.default_rng(0)
        us = rng.uniform(0, self.cam.width - 1, 1000)
        vs = rng.uniform(0, self.cam.height - 1, 1000)
        zs = rng.uniform(self.cam.near, self.cam.far, 1000)
        worst = 0.0
        for u, v, z in zip(us, vs, zs):
            w = pixel_to_world(self.cam, self.view, u, v, z)
            u2, v2, z2 = world_to_pixel(self.cam, self.view, w)
            worst = max(worst, abs(u2 - u) / max(abs(u), 1.0),
                        abs(v2 - v) / max(abs(v), 1.0),
                        abs(z2 - z) / max(abs(z), 1.0))
        assert worst < 1e-6

    def test_pixel_to_world_range_errors(self):
        with pytest.raises(ValueError):
            pixel_to_world(self.cam, self.view, 0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            pixel_to_world(self.cam, self.view, 0.0, 0.0, 6.5)

    def test_project_points_matches_scalar_path(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-2, 2, size=(200, 3))
        u, v, z = project_points(self.cam, self.view, pts)
        for i in range(200):
            res = world_to_pixel(self.cam, self.view, pts[i])
            if res is None:
                assert z[i] <= 0.0 or not np.isfinite(u[i])
            else:
                assert np.isclose(u[i], res[0], atol=1e-9)
                assert np.isclose(v[i], res[1], atol=1e-9)
                assert np.isclose(z[i], res[2], atol=1e-12)
