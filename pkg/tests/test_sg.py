import math

import numpy as np
import pytest

from voxlight.sg import (EnvMapGrid, Frame, SGEnvironment, SGFitOptions, SGLobe,
                         default_sg_init, eval_env, eval_sg, fibonacci_hemisphere,
                         rasterize_env, sg_fit, sg_fit_objective,
                         texel_directions, texel_solid_angles)

FRAME = Frame.from_normal([0.0, 0.0, 1.0])


def random_env(rng, lobes=3, min_sep_deg=0.0):
    while True:
        out = []
        for _ in range(lobes):
            out.append(SGLobe(axis_theta=rng.uniform(0.1, math.pi - 0.1),
                              axis_phi=rng.uniform(-math.pi, math.pi * 0.999),
                              sharpness=rng.uniform(0.0, 30.0),
                              intensity=tuple(rng.uniform(0.0, 3.0, 3))))
        env = SGEnvironment(tuple(out))
        if min_sep_deg == 0.0:
            return env
        axes = env.axes()
        dots = axes @ axes.T
        np.fill_diagonal(dots, -1.0)
        if np.max(dots) < math.cos(math.radians(min_sep_deg)):
            return env


class TestTypes:
    def test_unit_axis_is_unit(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            lobe = SGLobe(rng.uniform(0, math.pi), rng.uniform(-math.pi, math.pi * 0.99),
                          rng.uniform(0, 50), (1.0, 1.0, 1.0))
            assert abs(np.linalg.norm(lobe.unit_axis()) - 1.0) <= 1e-12

    def test_invalid_lobe_rejected(self):
        with pytest.raises(ValueError):
            SGLobe(-0.1, 0.0, 1.0, (1, 1, 1))
        with pytest.raises(ValueError):
            SGLobe(0.5, 0.0, -1.0, (1, 1, 1))
        with pytest.raises(ValueError):
            SGLobe(0.5, 0.0, 1.0, (-1, 1, 1))

    def test_visibility_defaults_and_bounds(self):
        env = SGEnvironment((SGLobe(0.5, 0.0, 1.0, (1, 1, 1)),))
        assert env.visibility == (1.0,)
        with pytest.raises(ValueError):
            SGEnvironment((SGLobe(0.5, 0.0, 1.0, (1, 1, 1)),), visibility=(1.5,))
        with pytest.raises(ValueError):
            SGEnvironment(())

    def test_envmap_invariants(self):
        with pytest.raises(ValueError):
            EnvMapGrid(width=4, height=2, frame=FRAME, texels=-np.ones((2, 4, 3)))
        with pytest.raises(ValueError):
            Frame(normal=np.array([0, 0, 1.0]), tangent=np.array([0, 0, 1.0]),
                  bitangent=np.array([0, 1.0, 0]))


class TestEvalSG:
    def test_axis_direction_returns_intensity(self):
        lobe = SGLobe(0.7, 1.1, 12.0, (0.5, 1.5, 2.5))
        np.testing.assert_array_equal(eval_sg(lobe, lobe.unit_axis()),
                                      np.array([0.5, 1.5, 2.5]))

    def test_zero_sharpness_is_constant(self):
        lobe = SGLobe(0.7, 1.1, 0.0, (0.5, 1.5, 2.5))
        rng = np.random.default_rng(2)
        for _ in range(10):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            np.testing.assert_array_equal(eval_sg(lobe, d), np.array([0.5, 1.5, 2.5]))

    def test_orthogonal_direction_analytic(self):
        lobe = SGLobe(math.pi / 2, 0.0, 1.0, (1.0, 1.0, 1.0))  # axis +x
        value = eval_sg(lobe, [0.0, 0.0, 1.0])
        np.testing.assert_allclose(value, math.exp(-1.0), rtol=1e-15)

    def test_rejects_non_unit_direction(self):
        lobe = SGLobe(0.5, 0.0, 1.0, (1, 1, 1))
        with pytest.raises(ValueError):
            eval_sg(lobe, [1.0, 1.0, 0.0])

    def test_monotone_in_angle(self):
        lobe = SGLobe(0.0, 0.0, 7.5, (1.0, 1.0, 1.0))  # axis +z
        angles = np.linspace(0.0, math.pi, 40)
        values = [eval_sg(lobe, [math.sin(a), 0.0, math.cos(a)])[0] for a in angles]
        assert np.all(np.diff(values) <= 1e-15)

    def test_bounded_by_intensity(self):
        rng = np.random.default_rng(3)
        lobe = SGLobe(1.0, 0.5, 9.0, (0.3, 0.6, 0.9))
        for _ in range(20):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            assert np.all(eval_sg(lobe, d) <= np.array([0.3, 0.6, 0.9]) + 1e-15)
            assert np.all(eval_sg(lobe, d) >= 0.0)


class TestEvalEnv:
    def test_fully_occluded_is_black(self):
        env = SGEnvironment((SGLobe(0.5, 0.0, 3.0, (1, 2, 3)),) * 2,
                            visibility=(0.0, 0.0))
        np.testing.assert_array_equal(eval_env(env, [0, 0, 1.0]), np.zeros(3))

    def test_single_lobe_matches_eval_sg(self):
        lobe = SGLobe(0.9, -2.0, 4.0, (0.2, 0.4, 0.8))
        env = SGEnvironment((lobe,))
        d = np.array([0.3, -0.1, 0.9486832980505138])
        d /= np.linalg.norm(d)
        np.testing.assert_allclose(eval_env(env, d), eval_sg(lobe, d), rtol=1e-15)

    def test_two_flat_lobes_visibility_sum(self):
        env = SGEnvironment((SGLobe(0.5, 0.0, 0.0, (1, 0, 0)),
                             SGLobe(1.0, 1.0, 0.0, (0, 2, 0))),
                            visibility=(1.0, 0.5))
        np.testing.assert_allclose(eval_env(env, [0, 0, 1.0]),
                                   np.array([1.0, 1.0, 0.0]), rtol=1e-15)


class TestRasterize:
    def test_flat_lobe_constant_grid(self):
        env = SGEnvironment((SGLobe(0.3, 0.3, 0.0, (0.7, 0.7, 0.7)),))
        grid = rasterize_env(env, 4, 8, FRAME)
        np.testing.assert_array_equal(grid.texels, np.full((4, 8, 3), 0.7))

    def test_occluded_env_all_zero(self):
        env = SGEnvironment((SGLobe(0.3, 0.3, 5.0, (1, 1, 1)),), visibility=(0.0,))
        grid = rasterize_env(env, 4, 8, FRAME)
        np.testing.assert_array_equal(grid.texels, np.zeros((4, 8, 3)))

    def test_matches_eval_env_bitwise(self):
        rng = np.random.default_rng(4)
        env = random_env(rng, 3)
        grid = rasterize_env(env, 8, 16, FRAME)
        dirs = texel_directions(8, 16, FRAME)
        for i in range(8):
            for j in range(16):
                np.testing.assert_array_equal(grid.texels[i, j],
                                              eval_env(env, dirs[i, j]))

    def test_solid_angles_tile_hemisphere(self):
        omega = texel_solid_angles(8, 16)
        assert abs(float(omega.sum() * 16) - 2.0 * math.pi) < 1e-12

    def test_directions_unit_and_upper(self):
        dirs = texel_directions(6, 12, FRAME)
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=-1), 1.0, atol=1e-12)
        assert np.all(dirs @ FRAME.normal > 0.0)


class TestFibonacci:
    def test_count_unit_and_hemisphere(self):
        pts = fibonacci_hemisphere(7)
        assert pts.shape == (7, 3)
        np.testing.assert_allclose(np.linalg.norm(pts, axis=-1), 1.0, atol=1e-12)
        assert np.all(pts[:, 2] > 0.0)


class TestGradient:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(5)
        dirs = texel_directions(8, 16, FRAME).reshape(-1, 3)
        target = rng.uniform(0.0, 2.0, (dirs.shape[0], 3))
        step = 1e-5
        for _ in range(20):
            params = np.stack([
                rng.uniform(0.2, math.pi - 0.2, 3),
                rng.uniform(-math.pi, math.pi, 3),
                np.log(rng.uniform(0.5, 50.0, 3)),
                np.log(rng.uniform(0.2, 3.0, 3)),
                np.log(rng.uniform(0.2, 3.0, 3)),
                np.log(rng.uniform(0.2, 3.0, 3)),
            ], axis=-1).ravel()
            _, grad = sg_fit_objective(params, target, dirs)
            fd = np.zeros_like(grad)
            for i in range(params.size):
                hi = params.copy(); hi[i] += step
                lo = params.copy(); lo[i] -= step
                fd[i] = (sg_fit_objective(hi, target, dirs)[0]
                         - sg_fit_objective(lo, target, dirs)[0]) / (2 * step)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-300)
            assert rel <= 1e-4


class TestFit:
    def test_rejects_bad_arguments(self):
        env = SGEnvironment((SGLobe(0.4, 0.1, 3.0, (1, 1, 1)),))
        grid = rasterize_env(env, 4, 8, FRAME)
        with pytest.raises(ValueError):
            sg_fit(grid, 0)

    def test_perturbed_single_lobe_recovers(self):
        gen = SGLobe(0.7, 0.4, 8.0, (1.5, 1.0, 0.6))
        target = rasterize_env(SGEnvironment((gen,)), 16, 32, FRAME)
        init = SGEnvironment((SGLobe(0.7 * 1.1, 0.4 * 0.9, 8.0 * 1.1,
                                     (1.5 * 0.9, 1.0 * 1.1, 0.6 * 0.95)),))
        result = sg_fit(target, 1, SGFitOptions(init=init))
        assert result.report.final_objective <= 1e-4

    def test_constant_target_exact_fit_exists(self):
        grid = EnvMapGrid(width=16, height=8, frame=FRAME,
                          texels=np.full((8, 16, 3), 0.8))
        result = sg_fit(grid, 1)
        assert result.report.final_objective <= 1e-6

    def test_three_lobe_recovery(self):
        rng = np.random.default_rng(6)
        env = random_env(rng, 3, min_sep_deg=60.0)
        target = rasterize_env(env, 16, 32, FRAME)
        result = sg_fit(target, 3, SGFitOptions(max_iters=2000))
        assert result.report.final_objective <= 1e-3
        assert result.report.iterations <= 2000

    def test_trace_non_increasing_and_invariants_hold(self):
        rng = np.random.default_rng(7)
        env = random_env(rng, 2)
        target = rasterize_env(env, 8, 16, FRAME)
        result = sg_fit(target, 2, SGFitOptions(max_iters=300))
        trace = np.array(result.report.objective_trace)
        assert np.all(np.diff(trace) <= 0.0)
        for lobe, mu in zip(result.environment.lobes, result.environment.visibility):
            assert lobe.sharpness >= 0.0
            assert all(c >= 0.0 for c in lobe.intensity)
            assert 0.0 <= lobe.axis_theta <= math.pi
            assert -math.pi <= lobe.axis_phi < math.pi
            assert mu == 1.0

    def test_non_finite_target_rejected(self):
        texels = np.full((4, 8, 3), 1.0)
        grid = EnvMapGrid(width=8, height=4, frame=FRAME, texels=texels)
        object.__setattr__(grid, "texels", texels * np.nan)
        with pytest.raises(ValueError):
            sg_fit(grid, 1)

    def test_default_init_is_deterministic(self):
        grid = EnvMapGrid(width=8, height=4, frame=FRAME,
                          texels=np.full((4, 8, 3), 0.5))
        a = default_sg_init(grid, 3)
        b = default_sg_init(grid, 3)
        assert a == b
