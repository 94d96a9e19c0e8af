"""Sphere insertion against a VSG lighting volume.

A mirror sphere composites the volume along reflected rays; a diffuse/rough
sphere shades a per-hit environment map through the microfacet layer.
Shadows modulate the existing image by the ratio of hemisphere irradiance
with and without the sphere as an occluder, so no albedo ground truth is
needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .brdf import MaterialSample, render_specular, rerender_pixel
from .geometry import View, depth_to_normal
from .sg import EnvMapGrid, Frame, texel_directions, texel_solid_angles
from .volume import Ray, VSGVolume, composite_rays, env_offset

DEFAULT_ENV_RES = (16, 32)   # (height, width), matching test-time env maps


@dataclass(frozen=True)
class MirrorMaterial:
    pass


@dataclass(frozen=True)
class DiffuseMaterial:
    albedo: tuple[float, float, float]
    roughness: float

    def __post_init__(self):
        albedo = tuple(float(c) for c in self.albedo)
        if any(not (0.0 <= c <= 1.0) for c in albedo):
            raise ValueError("albedo components must lie in [0, 1]")
        if not (0.0 < self.roughness <= 1.0):
            raise ValueError("roughness must lie in (0, 1]")
        object.__setattr__(self, "albedo", albedo)


SphereMaterial = Union[MirrorMaterial, DiffuseMaterial]


@dataclass(frozen=True)
class InsertedSphere:
    center: np.ndarray
    radius: float
    material: SphereMaterial

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        if center.shape != (3,):
            raise ValueError("center must be a 3-vector")
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", center)


@dataclass(frozen=True)
class SphereHit:
    t: float
    point: np.ndarray
    normal: np.ndarray


def ray_sphere(ray: Ray, sphere: InsertedSphere) -> SphereHit | None:
    """Nearest intersection of ``ray`` with the sphere, or None."""
    t = _ray_sphere_t(ray.origin[None, :], ray.direction[None, :],
                      sphere.center, sphere.radius, ray.t_max)[0]
    if not np.isfinite(t):
        return None
    point = ray.origin + t * ray.direction
    normal = (point - sphere.center) / sphere.radius
    return SphereHit(t=float(t), point=point, normal=normal)


def _ray_sphere_t(origins: np.ndarray, directions: np.ndarray, center: np.ndarray,
                  radius: float, t_max: float = math.inf,
                  t_min: float = 1e-9) -> np.ndarray:
    """Nearest hit parameter per ray; inf where the sphere is missed."""
    oc = origins - center
    b = np.sum(oc * directions, axis=-1)
    c = np.sum(oc * oc, axis=-1) - radius * radius
    disc = b * b - c
    sq = np.sqrt(np.maximum(disc, 0.0))
    t_near = -b - sq
    t_far = -b + sq
    t = np.where(t_near > t_min, t_near, t_far)
    ok = (disc >= 0.0) & (t > t_min) & (t <= t_max)
    return np.where(ok, t, np.inf)


def shade_sphere_pixel(hit: SphereHit, material: SphereMaterial, volume: VSGVolume,
                       view_dir, env_res: tuple[int, int] = DEFAULT_ENV_RES,
                       n_samples: int = 64) -> np.ndarray:
    """Radiance leaving the sphere toward the viewer at one hit point.

    ``view_dir`` is the unit camera-to-surface ray direction. Mirrors
    composite the volume along the reflected ray. Diffuse materials shade a
    per-hit environment map; the diffuse term is scaled by one minus the
    specular directional albedo so a unit-albedo sphere under constant
    lighting returns that lighting (energy-compensated compositing).
    """
    d = np.asarray(view_dir, dtype=np.float64)
    n = hit.normal
    if isinstance(material, MirrorMaterial):
        refl = d - 2.0 * float(np.dot(d, n)) * n
        refl /= np.linalg.norm(refl)
        return composite_rays(volume, hit.point[None, :], refl[None, :],
                              volume.bounds.diagonal, n_samples)[0]
    height, width = env_res
    frame = Frame.from_normal(n)
    from .volume import extract_env_map
    env = extract_env_map(volume, hit.point, frame, height, width, n_samples)
    sample = MaterialSample(albedo=material.albedo, roughness=material.roughness,
                            normal=n)
    v = -d / np.linalg.norm(d)
    diffuse, specular = rerender_pixel(sample, env, v)
    white = EnvMapGrid(width=width, height=height, frame=frame,
                       texels=np.ones((height, width, 3)))
    spec_albedo = render_specular(sample, white, v)
    return diffuse * (1.0 - spec_albedo) + specular


def _hemisphere_frames(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic tangent/bitangent for a batch of unit normals (P, 3)."""
    ref = np.where(np.abs(normals[:, 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]),
                   np.array([1.0, 0.0, 0.0]))
    t = np.cross(ref, normals)
    t /= np.linalg.norm(t, axis=-1, keepdims=True)
    return t, np.cross(normals, t)


def _shadow_ratios(points: np.ndarray, normals: np.ndarray, volume: VSGVolume,
                   sphere: InsertedSphere, n_dirs: tuple[int, int],
                   n_samples: int) -> np.ndarray:
    """Batched shadow ratio at surface points (P, 3) with unit normals."""
    height, width = n_dirs
    theta = (np.arange(height) + 0.5) * (0.5 * math.pi / height)
    phi = -math.pi + (np.arange(width) + 0.5) * (2.0 * math.pi / width)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    local = np.stack([np.outer(st, cp).ravel(), np.outer(st, sp).ravel(),
                      np.repeat(ct, width)], axis=-1)          # (D, 3) in frame
    tangent, bitangent = _hemisphere_frames(normals)
    dirs = (local[None, :, 0:1] * tangent[:, None, :]
            + local[None, :, 1:2] * bitangent[:, None, :]
            + local[None, :, 2:3] * normals[:, None, :])        # (P, D, 3)
    origins = (points + env_offset(volume) * normals)[:, None, :]
    origins = np.broadcast_to(origins, dirs.shape)

    # pixels with no occluded direction keep ratio 1 exactly; composite only
    # where the sphere actually blocks something
    blocked = np.isfinite(_ray_sphere_t(origins.reshape(-1, 3), dirs.reshape(-1, 3),
                                        sphere.center, sphere.radius))
    blocked = blocked.reshape(dirs.shape[:2])
    active = np.flatnonzero(blocked.any(axis=1))
    ratios = np.ones(dirs.shape[0])
    if active.size == 0:
        return ratios

    flat_o = origins[active].reshape(-1, 3)
    flat_d = dirs[active].reshape(-1, 3)
    radiance = composite_rays(volume, flat_o, flat_d, volume.bounds.diagonal,
                              n_samples).reshape(active.size, -1, 3)
    omega = np.repeat(texel_solid_angles(height, width), width)
    weight = (np.repeat(ct, width) * omega)[None, :, None]      # cos * dOmega
    energy = radiance * weight
    total = energy.sum(axis=(1, 2))
    occluded = np.sum(energy * blocked[active][..., None], axis=(1, 2))
    safe = np.where(total > 0.0, total, 1.0)
    ratios[active] = np.where(total > 0.0,
                              np.clip((total - occluded) / safe, 0.0, 1.0), 1.0)
    return ratios


def shadow_ratio(point, frame: Frame, volume: VSGVolume, sphere: InsertedSphere,
                 n_dirs: tuple[int, int] = DEFAULT_ENV_RES,
                 n_samples: int = 64) -> float:
    """Fraction of hemisphere irradiance surviving the sphere occluder.

    Both irradiance sums use the same texel-direction sampling as the
    environment extraction; directions whose ray hits the sphere contribute
    nothing to the numerator. With zero unoccluded irradiance the ratio is 1
    (no light casts no visible shadow).
    """
    point = np.asarray(point, dtype=np.float64)
    height, width = n_dirs
    origin = point + env_offset(volume) * frame.normal
    dirs = texel_directions(height, width, frame).reshape(-1, 3)
    origins = np.broadcast_to(origin, dirs.shape)
    radiance = composite_rays(volume, origins, dirs, volume.bounds.diagonal,
                              n_samples)
    cos = np.maximum(dirs @ frame.normal, 0.0)
    omega = np.repeat(texel_solid_angles(height, width), width)
    weight = (cos * omega)[:, None]
    total = float(np.sum(radiance * weight))
    if total <= 0.0:
        return 1.0
    blocked = np.isfinite(_ray_sphere_t(origins, dirs, sphere.center, sphere.radius))
    occluded = float(np.sum(radiance[blocked] * weight[blocked]))
    return max(0.0, min(1.0, (total - occluded) / total))


def insert_object(view: View, volume: VSGVolume, sphere: InsertedSphere,
                  normal_map: np.ndarray | None = None,
                  env_res: tuple[int, int] = DEFAULT_ENV_RES,
                  shadow_dirs: tuple[int, int] = DEFAULT_ENV_RES,
                  n_samples: int = 64) -> np.ndarray:
    """Composite the sphere into ``view`` with occlusion and shadows.

    Pixels whose camera ray reaches the sphere before the scene depth get
    sphere shading; all others keep the input radiance scaled by the local
    shadow ratio. Surface normals come from ``normal_map`` (camera frame)
    or are derived from the depth map.
    """
    h, w = view.depth.shape
    camera = view.camera
    dirs = camera.pixel_directions(h, w).reshape(-1, 3)
    origin = camera.center

    t_hit = _ray_sphere_t(np.broadcast_to(origin, dirs.shape), dirs,
                          sphere.center, sphere.radius)
    hit_points = origin + np.where(np.isfinite(t_hit), t_hit, 0.0)[:, None] * dirs
    hit_z = camera.camera_from_world(hit_points)[:, 2]
    on_sphere = np.isfinite(t_hit) & (hit_z < view.depth.reshape(-1))

    if normal_map is None:
        normal_map, _ = depth_to_normal(view.depth, camera)
    normals_world = normal_map.reshape(-1, 3) @ camera.rotation.T

    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    surface = camera.backproject(jj.reshape(-1), ii.reshape(-1),
                                 view.depth.reshape(-1))

    out = view.image.reshape(-1, 3).copy()
    shadowed = ~on_sphere
    if np.any(shadowed):
        ratios = _shadow_ratios(surface[shadowed], normals_world[shadowed],
                                volume, sphere, shadow_dirs, n_samples)
        out[shadowed] *= ratios[:, None]

    sphere_idx = np.flatnonzero(on_sphere)
    if sphere_idx.size and isinstance(sphere.material, MirrorMaterial):
        d = dirs[sphere_idx]
        n = (hit_points[sphere_idx] - sphere.center) / sphere.radius
        refl = d - 2.0 * np.sum(d * n, axis=-1, keepdims=True) * n
        refl /= np.linalg.norm(refl, axis=-1, keepdims=True)
        out[sphere_idx] = composite_rays(volume, hit_points[sphere_idx], refl,
                                         volume.bounds.diagonal, n_samples)
    else:
        for flat in sphere_idx:
            hit = SphereHit(t=float(t_hit[flat]), point=hit_points[flat],
                            normal=(hit_points[flat] - sphere.center) / sphere.radius)
            out[flat] = shade_sphere_pixel(hit, sphere.material, volume,
                                           dirs[flat], env_res, n_samples)
    return np.maximum(out.reshape(h, w, 3), 0.0)
