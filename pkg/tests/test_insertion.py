import math

import numpy as np
import pytest

from voxlight.geometry import Camera, View
from voxlight.insertion import (DiffuseMaterial, InsertedSphere, MirrorMaterial,
                                insert_object, ray_sphere, shade_sphere_pixel,
                                shadow_ratio)
from voxlight.sg import Frame, texel_directions, texel_solid_angles
from voxlight.volume import Bounds, Ray, VSGVolume, extract_env_map

BOUNDS = Bounds(lo=np.zeros(3), hi=np.full(3, 2.0))
FRAME = Frame.from_normal([0.0, 0.0, 1.0])


def fog_volume(alpha=0.15, intensity=(1.2, 1.0, 0.8), dims=(6, 6, 6)):
    return VSGVolume.uniform(dims, BOUNDS, alpha=alpha, sharpness=0.0,
                             intensity=intensity)


class TestRaySphere:
    def sphere(self, center=(1.0, 1.0, 1.0), radius=0.25):
        return InsertedSphere(center=np.array(center), radius=radius,
                              material=MirrorMaterial())

    def test_through_center(self):
        s = self.sphere()
        ray = Ray(origin=[1.0, 1.0, -1.0], direction=[0.0, 0.0, 1.0], t_max=10.0)
        hit = ray_sphere(ray, s)
        assert hit is not None
        assert abs(hit.t - (2.0 - 0.25)) <= 1e-12
        np.testing.assert_allclose(hit.normal, [0.0, 0.0, -1.0], atol=1e-12)

    def test_tangent_geometry(self):
        # perpendicular offset b: hit at t = sqrt(d^2 - b^2) for the chord center
        s = self.sphere(radius=0.25)
        b = 0.2
        ray = Ray(origin=[1.0 + b, 1.0, -1.0], direction=[0.0, 0.0, 1.0],
                  t_max=10.0)
        hit = ray_sphere(ray, s)
        assert hit is not None
        chord_half = math.sqrt(0.25 ** 2 - b ** 2)
        assert abs(hit.t - (2.0 - chord_half)) <= 1e-12

    def test_pointing_away_misses(self):
        s = self.sphere()
        ray = Ray(origin=[1.0, 1.0, -1.0], direction=[0.0, 0.0, -1.0], t_max=10.0)
        assert ray_sphere(ray, s) is None

    def test_radius_validated(self):
        with pytest.raises(ValueError):
            InsertedSphere(center=np.zeros(3), radius=0.0,
                           material=MirrorMaterial())


class TestShadeSphere:
    def test_mirror_in_fog_is_fog_radiance(self):
        vol = fog_volume()
        sphere = InsertedSphere(center=np.array([1.0, 1.0, 1.0]), radius=0.3,
                                material=MirrorMaterial())
        n = 64
        series = sum((1 - 0.15) ** k * 0.15 for k in range(n))
        expected = series * np.array([1.2, 1.0, 0.8])
        rng = np.random.default_rng(0)
        for _ in range(10):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            ray = Ray(origin=np.array([1.0, 1.0, 1.0]) - 0.9 * d, direction=d,
                      t_max=10.0)
            hit = ray_sphere(ray, sphere)
            shaded = shade_sphere_pixel(hit, sphere.material, vol, d,
                                        n_samples=n)
            np.testing.assert_allclose(shaded, expected, rtol=1e-9)

    def test_diffuse_white_furnace(self):
        vol = fog_volume(alpha=0.3, intensity=(0.9, 0.9, 0.9))
        n = 96
        series = sum((1 - 0.3) ** k * 0.3 for k in range(n))
        level = series * 0.9
        sphere = InsertedSphere(center=np.array([1.0, 1.0, 1.0]), radius=0.2,
                                material=DiffuseMaterial((1.0, 1.0, 1.0), 1.0))
        rng = np.random.default_rng(1)
        for _ in range(6):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            ray = Ray(origin=np.array([1.0, 1.0, 1.0]) - 0.8 * d, direction=d,
                      t_max=10.0)
            hit = ray_sphere(ray, sphere)
            shaded = shade_sphere_pixel(hit, sphere.material, vol, d,
                                        n_samples=n)
            np.testing.assert_allclose(shaded, level, rtol=0.02)


def single_emitter_volume(intensity=(40.0, 36.0, 30.0)):
    vox = np.zeros((8, 8, 8, 7))
    vox[3, 3, 7, 0] = 1.0
    vox[3, 3, 7, 4:7] = intensity
    return VSGVolume(bounds=BOUNDS, voxels=vox)


class TestShadowRatio:
    def test_sphere_below_hemisphere(self):
        vol = fog_volume()
        sphere = InsertedSphere(center=np.array([1.0, 1.0, -0.5]), radius=0.3,
                                material=MirrorMaterial())
        ratio = shadow_ratio([1.0, 1.0, 0.2], FRAME, vol, sphere)
        assert ratio == 1.0

    def test_zero_radius_limit(self):
        vol = fog_volume()
        sphere = InsertedSphere(center=np.array([1.0, 1.0, 1.0]), radius=1e-12,
                                material=MirrorMaterial())
        ratio = shadow_ratio([1.0, 1.0, 0.2], FRAME, vol, sphere)
        assert ratio == 1.0

    def test_dark_volume_ratio_one(self):
        vol = VSGVolume.uniform((4, 4, 4), BOUNDS, alpha=0.0)
        sphere = InsertedSphere(center=np.array([1.0, 1.0, 1.0]), radius=0.4,
                                material=MirrorMaterial())
        assert shadow_ratio([1.0, 1.0, 0.2], FRAME, vol, sphere) == 1.0

    def test_single_texel_accounting(self):
        vol = single_emitter_volume()
        point = np.array([0.875, 0.875, 0.1])
        n_dirs = (8, 16)
        env = extract_env_map(vol, point, FRAME, n_dirs[0], n_dirs[1], 64)
        cos = np.cos((np.arange(n_dirs[0]) + 0.5) * (math.pi / 2 / n_dirs[0]))
        omega = texel_solid_angles(*n_dirs)
        energy = (env.texels.mean(axis=-1) * (cos * omega)[:, None])
        total = energy.sum()
        bright = np.unravel_index(np.argmax(energy), energy.shape)
        bright_dir = env.directions()[bright]

        # sphere centered on the bright texel's ray, big enough to cover it
        center = point + 0.45 * bright_dir
        sphere = InsertedSphere(center=center, radius=0.12,
                                material=MirrorMaterial())
        ratio = shadow_ratio(point, FRAME, vol, sphere, n_dirs=n_dirs,
                             n_samples=64)
        # blocked texels identified independently by ray-sphere tests
        dirs = texel_directions(*n_dirs, FRAME).reshape(-1, 3)
        from voxlight.insertion import _ray_sphere_t
        from voxlight.volume import env_offset
        origins = np.broadcast_to(point + env_offset(vol) * FRAME.normal,
                                  dirs.shape)
        blocked = np.isfinite(_ray_sphere_t(origins, dirs, sphere.center,
                                            sphere.radius))
        share = energy.reshape(-1)[blocked].sum() / total
        assert share > 0.0
        assert abs(ratio - (1.0 - share)) <= 1e-9

    def test_monotone_in_radius(self):
        vol = single_emitter_volume()
        point = np.array([0.9, 0.9, 0.1])
        ratios = []
        for radius in (0.05, 0.1, 0.2, 0.35):
            sphere = InsertedSphere(center=np.array([1.0, 1.0, 1.0]),
                                    radius=radius, material=MirrorMaterial())
            ratios.append(shadow_ratio(point, FRAME, vol, sphere))
        assert all(0.0 <= r <= 1.0 for r in ratios)
        assert all(b <= a + 1e-12 for a, b in zip(ratios, ratios[1:]))


def overhead_view(h=36, w=48, height=1.6):
    # camera above the box, looking straight down at the z = 0 plane
    rot = np.array([[1.0, 0.0, 0.0],
                    [0.0, -1.0, 0.0],
                    [0.0, 0.0, -1.0]])
    cam = Camera(fx=45.0, fy=45.0, cx=(w - 1) / 2, cy=(h - 1) / 2,
                 rotation=rot, translation=np.array([1.0, 1.0, height]))
    depth = np.full((h, w), height)
    image = np.full((h, w, 3), 0.5)
    conf = np.ones((h, w))
    normal_cam = np.broadcast_to([0.0, 0.0, -1.0], (h, w, 3)).copy()
    return View(image=image, depth=depth, confidence=conf, camera=cam), normal_cam


class TestInsertObject:
    def test_unaffected_pixels_bitwise_identical(self):
        view, normals = overhead_view()
        vol = VSGVolume.uniform((4, 4, 4), BOUNDS, alpha=0.0)  # dark volume
        sphere = InsertedSphere(center=np.array([1.0, 1.0, 0.8]), radius=0.2,
                                material=MirrorMaterial())
        out = insert_object(view, vol, sphere, normal_map=normals,
                            shadow_dirs=(4, 8), n_samples=8)
        # dark volume: ratio is 1 by convention; only sphere pixels change
        u, v, z = view.camera.project(np.array([[1.0, 1.0, 0.8]]))
        changed = np.argwhere(np.any(out != view.image, axis=-1))
        if changed.size:
            dist = np.hypot(changed[:, 1] - u[0], changed[:, 0] - v[0])
            assert dist.max() <= 12.0  # all changed pixels near the sphere
        # far corner certainly unchanged, bitwise
        np.testing.assert_array_equal(out[0, 0], view.image[0, 0])

    def test_sphere_filling_frame_is_pure_shading(self):
        view, normals = overhead_view(h=12, w=16)
        vol = fog_volume()
        sphere = InsertedSphere(center=np.array([1.0, 1.0, 0.9]), radius=0.75,
                                material=MirrorMaterial())
        out = insert_object(view, vol, sphere, normal_map=normals,
                            shadow_dirs=(4, 8), n_samples=64)
        series = sum((1 - 0.15) ** k * 0.15 for k in range(64))
        expected = series * np.array([1.2, 1.0, 0.8])
        np.testing.assert_allclose(out, np.broadcast_to(expected, out.shape),
                                   rtol=1e-6)

    def test_mirror_fog_shading_radius_invariant(self):
        view, normals = overhead_view(h=16, w=20)
        vol = fog_volume()
        outs = []
        for radius in (0.15, 0.4):
            sphere = InsertedSphere(center=np.array([1.0, 1.0, 0.9]),
                                    radius=radius, material=MirrorMaterial())
            out = insert_object(view, vol, sphere, normal_map=normals,
                                shadow_dirs=(4, 8), n_samples=64)
            u, v, _ = view.camera.project(np.array([[1.0, 1.0, 0.9]]))
            outs.append(out[int(round(v[0])), int(round(u[0]))])
        np.testing.assert_allclose(outs[0], outs[1], rtol=1e-9)

    def test_occluded_sphere_leaves_image(self):
        view, normals = overhead_view()
        vol = VSGVolume.uniform((4, 4, 4), BOUNDS, alpha=0.0)
        # sphere below the plane: always behind the scene depth
        sphere = InsertedSphere(center=np.array([1.0, 1.0, -0.6]), radius=0.2,
                                material=MirrorMaterial())
        out = insert_object(view, vol, sphere, normal_map=normals,
                            shadow_dirs=(4, 8), n_samples=8)
        np.testing.assert_array_equal(out, view.image)

    def test_shadow_darkest_point_matches_projection(self):
        view, normals = overhead_view(h=48, w=64)
        # extended corner light, small sphere: penumbra-dominated shadow whose
        # minimum is unique and clears the sphere silhouette
        vox = np.zeros((8, 8, 8, 7))
        vox[0:2, 0:2, 7, 0] = 1.0
        vox[0:2, 0:2, 7, 4:7] = (40.0, 36.0, 30.0)
        vol = VSGVolume(bounds=BOUNDS, voxels=vox)
        light = np.array([0.25, 0.25, 1.875])  # emitter block centroid
        sphere_center = np.array([1.0, 1.0, 0.5])
        sphere = InsertedSphere(center=sphere_center, radius=0.1,
                                material=MirrorMaterial())
        out = insert_object(view, vol, sphere, normal_map=normals,
                            shadow_dirs=(16, 32), n_samples=48)
        ratio = out[..., 0] / view.image[..., 0]
        # exclude sphere-covered pixels from the search
        dirs = view.camera.pixel_directions(*view.depth.shape).reshape(-1, 3)
        from voxlight.insertion import _ray_sphere_t
        t = _ray_sphere_t(np.broadcast_to(view.camera.center, dirs.shape), dirs,
                          sphere.center, sphere.radius)
        on_sphere = np.isfinite(t).reshape(view.depth.shape)
        ratio[on_sphere] = 1.0
        darkest = np.unravel_index(np.argmin(ratio), ratio.shape)
        # analytic projection of the sphere center along the light direction
        direction = sphere_center - light
        s = -light[2] / direction[2]
        ground_point = light + s * direction
        u, v, _ = view.camera.project(ground_point[None, :])
        dist = math.hypot(darkest[1] - u[0], darkest[0] - v[0])
        assert dist <= 2.0
