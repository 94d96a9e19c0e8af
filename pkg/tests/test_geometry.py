import math

import numpy as np
import pytest

from voxlight.geometry import (Camera, View, ViewBundle, bilinear_sample,
                               depth_gradient, depth_to_normal, derive_geometry,
                               multiview_weights, projection_error, reproject)


def make_camera(fx=60.0, fy=60.0, cx=39.5, cy=29.5, rotation=None,
                translation=(0.0, 0.0, 0.0)) -> Camera:
    rotation = np.eye(3) if rotation is None else rotation
    return Camera(fx=fx, fy=fy, cx=cx, cy=cy, rotation=rotation,
                  translation=np.asarray(translation, dtype=np.float64))


def rot_x(deg):
    a = math.radians(deg)
    return np.array([[1, 0, 0],
                     [0, math.cos(a), -math.sin(a)],
                     [0, math.sin(a), math.cos(a)]])


class TestCamera:
    def test_pose_validation(self):
        with pytest.raises(ValueError):
            make_camera(fx=-1.0)
        with pytest.raises(ValueError):
            Camera(fx=1, fy=1, cx=0, cy=0, rotation=np.eye(3) * 2.0,
                   translation=np.zeros(3))
        flipped = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            Camera(fx=1, fy=1, cx=0, cy=0, rotation=flipped,
                   translation=np.zeros(3))

    def test_project_backproject_roundtrip(self):
        cam = make_camera(rotation=rot_x(25.0), translation=(0.3, -0.2, 1.1))
        rng = np.random.default_rng(0)
        for _ in range(50):
            u, v, z = rng.uniform(0, 79), rng.uniform(0, 59), rng.uniform(0.5, 5)
            point = cam.backproject(u, v, z)
            uu, vv, zz = cam.project(point)
            assert abs(uu - u) <= 1e-6 and abs(vv - v) <= 1e-6
            assert abs(zz - z) <= 1e-9

    def test_pixel_directions_unit(self):
        cam = make_camera(rotation=rot_x(40.0))
        dirs = cam.pixel_directions(6, 8)
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=-1), 1.0, atol=1e-12)


class TestDepthToNormal:
    def test_constant_depth_gives_facing_normals(self):
        cam = make_camera()
        normals, degenerate = depth_to_normal(np.full((20, 30), 2.0), cam)
        np.testing.assert_allclose(normals,
                                   np.broadcast_to([0.0, 0.0, -1.0], (20, 30, 3)),
                                   atol=1e-12)
        assert not degenerate.any()

    def test_tilted_plane_matches_analytic_normal(self):
        # plane z = z0 + a * x_world in the camera frame
        cam = make_camera()
        a, z0 = 0.35, 2.0
        jj, ii = np.meshgrid(np.arange(40), np.arange(30))
        # depth solves z = z0 + a * (u - cx)/fx * z
        depth = z0 / (1.0 - a * (jj - cam.cx) / cam.fx)
        assert np.all(depth > 0)
        normals, _ = depth_to_normal(depth, cam)
        expected = np.array([a, 0.0, -1.0])
        expected /= np.linalg.norm(expected)
        dots = np.clip(normals @ expected, -1.0, 1.0)
        worst_deg = math.degrees(float(np.max(np.arccos(dots))))
        assert worst_deg <= 0.5

    def test_random_smooth_depth_matches_window_fit(self):
        cam = make_camera(fx=80.0, fy=80.0, cx=15.5, cy=11.5)
        rng = np.random.default_rng(1)
        h, w = 24, 32
        jj, ii = np.meshgrid(np.arange(w), np.arange(h))
        depth = (2.0 + 0.15 * np.sin(2 * math.pi * jj / w)
                 + 0.1 * np.cos(2 * math.pi * ii / h))
        normals, _ = depth_to_normal(depth, cam)
        positions = np.stack([(jj - cam.cx) / cam.fx * depth,
                              (ii - cam.cy) / cam.fy * depth, depth], axis=-1)
        worst = 0.0
        for i in range(1, h - 1, 3):
            for j in range(1, w - 1, 3):
                window = positions[i - 1:i + 2, j - 1:j + 2].reshape(-1, 3)
                centered = window - window.mean(axis=0)
                _, _, vt = np.linalg.svd(centered, full_matrices=False)
                plane_n = vt[-1]
                if plane_n @ positions[i, j] > 0:
                    plane_n = -plane_n
                dot = np.clip(normals[i, j] @ plane_n, -1.0, 1.0)
                worst = max(worst, math.degrees(math.acos(dot)))
        assert worst <= 2.0

    def test_normals_unit_and_camera_facing(self):
        cam = make_camera()
        rng = np.random.default_rng(2)
        jj, ii = np.meshgrid(np.arange(25), np.arange(20))
        depth = 2.0 + 0.2 * np.sin(jj / 4.0) * np.cos(ii / 3.0)
        normals, degenerate = depth_to_normal(depth, cam)
        norms = np.linalg.norm(normals, axis=-1)
        np.testing.assert_allclose(norms[~degenerate], 1.0, atol=1e-6)
        positions = np.stack([(jj - cam.cx) / cam.fx * depth,
                              (ii - cam.cy) / cam.fy * depth, depth], axis=-1)
        facing = np.sum(normals * positions, axis=-1)
        assert np.all(facing[~degenerate] < 0.0)

    def test_rejects_nonpositive_depth(self):
        with pytest.raises(ValueError):
            depth_to_normal(np.zeros((4, 4)), make_camera())


class TestDepthGradient:
    def test_constant_depth_zero(self):
        np.testing.assert_array_equal(depth_gradient(np.full((10, 12), 3.0)),
                                      np.zeros((10, 12)))

    def test_linear_ramp_is_one(self):
        jj = np.meshgrid(np.arange(12), np.arange(10))[0].astype(float)
        np.testing.assert_allclose(depth_gradient(jj + 1.0), np.ones((10, 12)),
                                   atol=1e-12)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(3)
        depth = rng.uniform(1.0, 3.0, (9, 11))
        got = depth_gradient(depth)
        h, w = depth.shape
        expected = np.zeros_like(depth)
        for i in range(h):
            for j in range(w):
                if 0 < j < w - 1:
                    du = (depth[i, j + 1] - depth[i, j - 1]) / 2.0
                else:
                    du = depth[i, min(j + 1, w - 1)] - depth[i, max(j - 1, 0)]
                if 0 < i < h - 1:
                    dv = (depth[i + 1, j] - depth[i - 1, j]) / 2.0
                else:
                    dv = depth[min(i + 1, h - 1), j] - depth[max(i - 1, 0), j]
                expected[i, j] = math.hypot(du, dv)
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_derive_geometry_bundles_maps(self):
        maps = derive_geometry(np.full((6, 7), 2.0), make_camera())
        assert maps.normal.shape == (6, 7, 3)
        assert maps.depth_gradient.shape == (6, 7)
        assert not maps.degenerate.any()


class TestReproject:
    def test_identity_pose_keeps_pixel(self):
        cam = make_camera()
        depth_map = np.full((60, 80), 2.0)
        r = reproject(12.0, 34.0, 2.0, cam, cam, depth_map)
        assert abs(r.u - 12.0) <= 1e-9 and abs(r.v - 34.0) <= 1e-9
        ray = np.array([(12.0 - cam.cx) / cam.fx, (34.0 - cam.cy) / cam.fy, 1.0])
        assert abs(r.distance - 2.0 * np.linalg.norm(ray)) <= 1e-12
        assert r.valid

    def test_translation_shifts_u_by_parallax(self):
        cam = make_camera()
        tx = 0.25
        other = make_camera(translation=(tx, 0.0, 0.0))
        z = 2.0
        r = reproject(40.0, 30.0, z, cam, other, np.full((60, 80), z))
        assert abs((40.0 - r.u) - cam.fx * tx / z) <= 1e-9

    def test_behind_camera_flagged(self):
        cam = make_camera()
        # same center, turned 180 degrees: the point sits behind it
        turned = make_camera(rotation=rot_x(180.0))
        r = reproject(40.0, 30.0, 2.0, cam, turned, np.full((60, 80), 2.0))
        assert not r.in_front
        assert not r.valid

    def test_rejects_nonpositive_depth(self):
        cam = make_camera()
        with pytest.raises(ValueError):
            reproject(1.0, 1.0, 0.0, cam, cam)


class TestProjectionError:
    def test_unit_gap_is_zero(self):
        assert projection_error(3.0, 2.0) == 0.0

    def test_exp_minus_two_gap(self):
        assert abs(projection_error(2.0 + math.exp(-2.0), 2.0) - 2.0) <= 1e-12

    def test_large_gap_clamped(self):
        assert projection_error(12.0, 2.0) == 0.0

    def test_zero_gap_capped(self):
        assert projection_error(2.0, 2.0) == 30.0

    def test_non_increasing_in_gap(self):
        gaps = np.linspace(0.0, 2.0, 200)
        errs = projection_error(gaps, 0.0)
        assert np.all(np.diff(errs) <= 1e-12)
        assert np.all(errs[gaps >= 1.0] == 0.0)


class TestMultiviewWeights:
    def test_hand_case(self):
        np.testing.assert_allclose(multiview_weights([1.0, 1.0, 2.0]),
                                   [0.25, 0.25, 0.5], atol=1e-15)

    def test_one_hot_preserved(self):
        np.testing.assert_array_equal(multiview_weights([0.0, 5.0, 0.0]),
                                      [0.0, 1.0, 0.0])

    def test_all_zero_uniform_fallback(self):
        np.testing.assert_allclose(multiview_weights([0.0, 0.0, 0.0]),
                                   [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_probability_vector(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            w = multiview_weights(rng.uniform(0.0, 5.0, 9))
            assert np.all(w >= 0.0)
            assert abs(w.sum() - 1.0) <= 1e-12

    def test_invalid_views_zeroed(self):
        w = multiview_weights([1.0, 1.0, 1.0], valid=[True, False, True])
        np.testing.assert_allclose(w, [0.5, 0.0, 0.5], atol=1e-15)

    def test_scale_invariance_of_log_base(self):
        # rescaling all errors (a change of log base) leaves weights unchanged
        e = np.array([0.5, 1.5, 3.0])
        np.testing.assert_allclose(multiview_weights(e),
                                   multiview_weights(e * math.log(10.0)),
                                   atol=1e-15)


class TestViewBundle:
    def test_shape_checks(self):
        cam = make_camera()
        view = View(image=np.zeros((4, 5, 3)), depth=np.ones((4, 5)),
                    confidence=np.ones((4, 5)), camera=cam)
        bundle = ViewBundle(views=[view], target_index=0)
        assert bundle.target is view
        with pytest.raises(ValueError):
            ViewBundle(views=[view], target_index=1)
        with pytest.raises(ValueError):
            View(image=np.zeros((4, 5, 3)), depth=np.zeros((4, 5)),
                 confidence=np.ones((4, 5)), camera=cam)


class TestBilinear:
    def test_exact_at_grid_points(self):
        rng = np.random.default_rng(5)
        grid = rng.uniform(0, 1, (6, 7, 3))
        np.testing.assert_array_equal(bilinear_sample(grid, 3.0, 2.0), grid[2, 3])

    def test_midpoint_average(self):
        grid = np.array([[0.0, 2.0]])
        assert bilinear_sample(grid, 0.5, 0.0) == 1.0
