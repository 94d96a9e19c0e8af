"""Volumetric spherical-Gaussian lighting: voxel grids of (opacity + SG),
ray sampling with alpha compositing, per-point environment-map extraction,
and gradient-based volume fitting.

Voxels live on a center-aligned lattice inside an axis-aligned box; samples
are read by trilinear interpolation (the axis by normalized linear
interpolation of unit vectors). A ray composites front to back:
radiance = sum_n prod_{m<n}(1 - alpha_m) alpha_n G(-l; sample_n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .optim import FitReport, minimize_monotone
from .sg import EnvMapGrid, Frame, _as_unit, texel_directions

ENV_EPS_FACTOR = 1e-3  # surface offset, in units of mean voxel size

CHANNEL_ORDER = ("alpha", "theta", "phi", "sharpness", "r", "g", "b")


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned box in world space, meters."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("bounds need 3-vector corners")
        if not np.all(hi > lo):
            raise ValueError("bounds must have strictly positive extent on all axes")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_max: float

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64)
        direction = _as_unit(self.direction)
        if self.t_max <= 0.0:
            raise ValueError("t_max must be positive")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)


@dataclass
class VSGVolume:
    """X x Y x Z grid of 7-scalar voxels: opacity alpha, axis (theta, phi),
    sharpness, RGB intensity. Equivalent to an 8-channel record with the
    axis held as a unit 3-vector; here the axis is stored as two angles."""

    bounds: Bounds
    voxels: np.ndarray  # (X, Y, Z, 7), channels per CHANNEL_ORDER

    def __post_init__(self):
        v = np.asarray(self.voxels, dtype=np.float64)
        if v.ndim != 4 or v.shape[3] != 7:
            raise ValueError(f"voxels must have shape (X, Y, Z, 7), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("voxel channels must all be finite")
        if np.any(v[..., 0] < 0.0) or np.any(v[..., 0] > 1.0):
            raise ValueError("opacity must lie in [0, 1]")
        if np.any(v[..., 3] < 0.0):
            raise ValueError("sharpness must be >= 0")
        if np.any(v[..., 4:7] < 0.0):
            raise ValueError("intensity must be >= 0")
        self.voxels = v

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape[:3]

    @property
    def cell_size(self) -> np.ndarray:
        return self.bounds.extent / np.asarray(self.dims)

    def voxel_centers(self) -> np.ndarray:
        """World-space voxel centers, shape (X, Y, Z, 3)."""
        axes = [self.bounds.lo[a] + (np.arange(self.dims[a]) + 0.5) * self.cell_size[a]
                for a in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def axis_vectors(self) -> np.ndarray:
        theta = self.voxels[..., 1]
        phi = self.voxels[..., 2]
        st = np.sin(theta)
        return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)

    @staticmethod
    def uniform(dims: tuple[int, int, int], bounds: Bounds, alpha: float = 0.0,
                axis_theta: float = 0.0, axis_phi: float = 0.0,
                sharpness: float = 0.0, intensity=(0.0, 0.0, 0.0)) -> "VSGVolume":
        voxels = np.empty(tuple(dims) + (7,))
        voxels[...] = (alpha, axis_theta, axis_phi, sharpness, *intensity)
        return VSGVolume(bounds=bounds, voxels=voxels)


@dataclass
class RaySamples:
    """Per-sample interpolated channels along one ray (may be empty)."""

    t: np.ndarray          # (M,) ray parameters, meters
    alpha: np.ndarray      # (M,)
    axis: np.ndarray       # (M, 3) unit vectors after interpolation
    sharpness: np.ndarray  # (M,)
    intensity: np.ndarray  # (M, 3)

    def __len__(self) -> int:
        return self.t.shape[0]

    @staticmethod
    def empty() -> "RaySamples":
        return RaySamples(t=np.empty(0), alpha=np.empty(0), axis=np.empty((0, 3)),
                          sharpness=np.empty(0), intensity=np.empty((0, 3)))


def clip_ray(bounds: Bounds, origin: np.ndarray, direction: np.ndarray,
             t_max: float) -> tuple[float, float] | None:
    """Parametric [enter, exit) of the ray inside ``bounds``, or None."""
    t_near, t_far = 0.0, t_max
    for axis in range(3):
        d = direction[axis]
        if abs(d) < 1e-300:
            if not (bounds.lo[axis] <= origin[axis] <= bounds.hi[axis]):
                return None
            continue
        t0 = (bounds.lo[axis] - origin[axis]) / d
        t1 = (bounds.hi[axis] - origin[axis]) / d
        if t0 > t1:
            t0, t1 = t1, t0
        t_near = max(t_near, t0)
        t_far = min(t_far, t1)
    if t_far <= t_near:
        return None
    return t_near, t_far


def _interp_corners(volume: VSGVolume, points: np.ndarray):
    """Trilinear corner indices (..., 8) into the flattened grid and weights."""
    dims = np.asarray(volume.dims)
    grid = (points - volume.bounds.lo) / volume.cell_size - 0.5
    grid = np.clip(grid, 0.0, dims - 1.0)
    i0 = np.minimum(np.floor(grid).astype(np.int64), np.maximum(dims - 2, 0))
    frac = np.where(dims > 1, grid - i0, 0.0)
    i1 = np.minimum(i0 + 1, dims - 1)

    _, y, z = (int(d) for d in dims)
    shape = points.shape[:-1]
    ix = np.stack([i0[..., 0], i1[..., 0]], axis=-1)
    iy = np.stack([i0[..., 1], i1[..., 1]], axis=-1)
    iz = np.stack([i0[..., 2], i1[..., 2]], axis=-1)
    corners = ((ix[..., :, None, None] * y + iy[..., None, :, None]) * z
               + iz[..., None, None, :]).reshape(shape + (8,))
    wx = np.stack([1.0 - frac[..., 0], frac[..., 0]], axis=-1)
    wy = np.stack([1.0 - frac[..., 1], frac[..., 1]], axis=-1)
    wz = np.stack([1.0 - frac[..., 2], frac[..., 2]], axis=-1)
    weights = (wx[..., :, None, None] * wy[..., None, :, None]
               * wz[..., None, None, :]).reshape(shape + (8,))
    return corners, weights


def _gather(field: np.ndarray, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted gather of ``field`` (V,) or (V, C) at corner indices."""
    if field.ndim == 1:
        return np.sum(field[idx] * w, axis=-1)
    return np.sum(field[idx] * w[..., None], axis=-2)


def _interpolate_channels(volume: VSGVolume, points: np.ndarray):
    """(alpha, unit axis, sharpness, intensity) at world points (..., 3)."""
    idx, w = _interp_corners(volume, points)
    flat = volume.voxels.reshape(-1, 7)
    axis_flat = volume.axis_vectors().reshape(-1, 3)
    alpha = np.clip(_gather(flat[:, 0], idx, w), 0.0, 1.0)
    u = _gather(axis_flat, idx, w)
    norm = np.linalg.norm(u, axis=-1, keepdims=True)
    axis = np.where(norm > 1e-12, u / np.where(norm > 0.0, norm, 1.0),
                    np.array([0.0, 0.0, 1.0]))
    sharp = np.maximum(_gather(flat[:, 3], idx, w), 0.0)
    eta = np.maximum(_gather(flat[:, 4:7], idx, w), 0.0)
    return alpha, axis, sharp, eta


def _sample_ts(t_near: float, t_far: float, n_samples: int) -> np.ndarray:
    """Stratified midpoints of ``n_samples`` equal spans of [t_near, t_far]."""
    return t_near + (np.arange(n_samples) + 0.5) * ((t_far - t_near) / n_samples)


def sample_ray(volume: VSGVolume, ray: Ray, n_samples: int) -> RaySamples:
    """Interpolated volume channels at equally spaced points along the ray
    segment clipped to the volume bounds. A ray that misses the bounds
    yields an empty record (its radiance is zero)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    span = clip_ray(volume.bounds, ray.origin, ray.direction, ray.t_max)
    if span is None:
        return RaySamples.empty()
    ts = _sample_ts(span[0], span[1], n_samples)
    points = ray.origin + ts[:, None] * ray.direction
    alpha, axis, sharp, eta = _interpolate_channels(volume, points)
    return RaySamples(t=ts, alpha=alpha, axis=axis, sharpness=sharp, intensity=eta)


def compositing_weights(alpha: np.ndarray) -> np.ndarray:
    """Front-to-back weights w_n = prod_{m<n}(1 - alpha_m) * alpha_n."""
    alpha = np.asarray(alpha, dtype=np.float64)
    trans = np.cumprod(1.0 - alpha, axis=-1)
    ones = np.ones(alpha.shape[:-1] + (1,))
    exclusive = np.concatenate([ones, trans[..., :-1]], axis=-1)
    return exclusive * alpha


def composite_ray(volume: VSGVolume, ray: Ray, n_samples: int) -> np.ndarray:
    """Alpha-composited RGB radiance arriving at the ray origin.

    Each sample emits its SG evaluated in the direction opposite to travel,
    G(-l), weighted by prod_{m<n}(1 - alpha_m) * alpha_n. Delegates to the
    batched evaluator so scalar and batched results agree exactly.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return composite_rays(volume, ray.origin[None, :], ray.direction[None, :],
                          ray.t_max, n_samples)[0]


def composite_rays(volume: VSGVolume, origins: np.ndarray, directions: np.ndarray,
                   t_max: float, n_samples: int,
                   chunk: int = 8192) -> np.ndarray:
    """Vectorized ``composite_ray`` over (R, 3) origins and unit directions."""
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    out = np.zeros((origins.shape[0], 3))
    fields = np.concatenate([volume.voxels[..., 0].reshape(-1, 1),
                             volume.axis_vectors().reshape(-1, 3),
                             volume.voxels[..., 3:7].reshape(-1, 4)], axis=-1)
    for start in range(0, origins.shape[0], chunk):
        sl = slice(start, min(start + chunk, origins.shape[0]))
        o, d = origins[sl], directions[sl]
        ts, valid = _clip_ray_batch(volume.bounds, o, d, t_max, n_samples)
        points = o[:, None, :] + ts[..., None] * d[:, None, :]
        idx, w = _interp_corners(volume, points)
        w = w * valid[:, None, None]
        interp = np.einsum("rnk,rnkc->rnc", w, fields[idx])
        alpha = np.clip(interp[..., 0], 0.0, 1.0)
        u = interp[..., 1:4]
        norm = np.linalg.norm(u, axis=-1, keepdims=True)
        axis = np.where(norm > 1e-12, u / np.where(norm > 0.0, norm, 1.0),
                        np.array([0.0, 0.0, 1.0]))
        sharp = np.maximum(interp[..., 4], 0.0)
        eta = np.maximum(interp[..., 5:8], 0.0)
        dots = -np.sum(axis * d[:, None, :], axis=-1)
        emit = eta * np.exp(sharp * (dots - 1.0))[..., None]
        weights = compositing_weights(alpha)
        out[sl] = np.sum(weights[..., None] * emit, axis=1)
    return np.maximum(out, 0.0)


def _clip_ray_batch(bounds: Bounds, origins: np.ndarray, directions: np.ndarray,
                    t_max: float, n_samples: int):
    """Sample parameters (R, N) and a validity mask for a batch of rays."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(np.abs(directions) > 1e-300, 1.0 / directions, np.inf)
    t0 = (bounds.lo - origins) * inv
    t1 = (bounds.hi - origins) * inv
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    # degenerate axes: inside -> (-inf, inf), outside -> empty
    par = np.abs(directions) <= 1e-300
    inside = (origins >= bounds.lo) & (origins <= bounds.hi)
    lo = np.where(par, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(par, np.where(inside, np.inf, -np.inf), hi)
    t_near = np.maximum(lo.max(axis=-1), 0.0)
    t_far = np.minimum(hi.min(axis=-1), t_max)
    valid = t_far > t_near
    t_near = np.where(valid, t_near, 0.0)
    t_far = np.where(valid, t_far, 1.0)
    frac = (np.arange(n_samples) + 0.5) / n_samples
    ts = t_near[:, None] + frac[None, :] * (t_far - t_near)[:, None]
    return ts, valid.astype(np.float64)


def env_offset(volume: VSGVolume) -> float:
    return ENV_EPS_FACTOR * float(np.mean(volume.cell_size))


def extract_env_map(volume: VSGVolume, point, frame: Frame, height: int,
                    width: int, n_samples: int = 64) -> EnvMapGrid:
    """Hemispherical environment map at ``point`` by compositing one ray per
    texel-center direction (origin nudged along the frame normal so the
    surface's own voxel does not occlude it)."""
    point = np.asarray(point, dtype=np.float64)
    origin = point + env_offset(volume) * frame.normal
    dirs = texel_directions(height, width, frame).reshape(-1, 3)
    origins = np.broadcast_to(origin, dirs.shape)
    radiance = composite_rays(volume, origins, dirs, volume.bounds.diagonal,
                              n_samples)
    return EnvMapGrid(width=width, height=height, frame=frame,
                      texels=radiance.reshape(height, width, 3))


# ---------------------------------------------------------------------------
# Fitting. Internal parameterization per voxel: (logit alpha, theta, phi,
# log sharpness, log intensity rgb); sigmoid/exp keep the invariants without
# clamping. Ray geometry and interpolation stencils are fixed up front, so
# the objective is smooth in the parameters.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvTarget:
    """One supervision point: hemisphere env map observed at ``point``."""

    point: np.ndarray
    frame: Frame
    grid: EnvMapGrid


@dataclass
class VSGFitOptions:
    max_iters: int = 3000
    step: float = 0.1
    grow: float = 1.15
    shrink: float = 0.5
    beta_fit: float = 10.0       # weight of the per-target si-log-MSE terms
    beta_entropy: float = 1e-2   # weight of the opacity entropy regularizer
    n_samples: int = 64
    init_alpha: float = 0.1
    init_sharpness: float = 0.5
    objective_tol: float = 0.0


@dataclass
class VSGFitResult:
    volume: VSGVolume
    report: FitReport


class VSGFitProblem:
    """Precomputed geometry for the fit objective: per-target texel rays,
    interpolation stencils, and flattened target radiance."""

    def __init__(self, targets, dims, bounds: Bounds, options: VSGFitOptions):
        if len(targets) == 0:
            raise ValueError("at least one fit target is required")
        dims = tuple(int(d) for d in dims)
        if np.prod(dims) > 32 ** 3:
            raise ValueError("fit volumes are limited to 32^3 voxels")
        self.dims = dims
        self.bounds = bounds
        self.options = options
        self.n_voxels = int(np.prod(dims))

        template = VSGVolume.uniform(dims, bounds)
        eps = env_offset(template)
        diag = bounds.diagonal

        origin_list, dir_list, self.slices, self.target_flat = [], [], [], []
        start = 0
        for target in targets:
            target = target if isinstance(target, EnvTarget) else EnvTarget(*target)
            grid = target.grid
            dirs = texel_directions(grid.height, grid.width, target.frame).reshape(-1, 3)
            origin = np.asarray(target.point, dtype=np.float64) + eps * target.frame.normal
            origin_list.append(np.broadcast_to(origin, dirs.shape))
            dir_list.append(dirs)
            count = dirs.shape[0]
            self.slices.append(slice(start, start + count))
            start += count
            flat = grid.texels.reshape(-1, 3)
            if not np.all(np.isfinite(flat)):
                raise ValueError("target texels must all be finite")
            self.target_flat.append(flat)

        origins = np.concatenate(origin_list)
        self.directions = np.concatenate(dir_list)
        n = options.n_samples
        ts, valid = _clip_ray_batch(bounds, origins, self.directions, diag, n)
        points = origins[:, None, :] + ts[..., None] * self.directions[:, None, :]
        self.idx, w = _interp_corners(template, points)
        self.weights = w * valid[:, None, None]
        self.neg_dirs = -self.directions
        # scatter keys are fixed: voxel index * 8 + gradient field index
        self.scatter_keys = (self.idx[..., None] * 8 + np.arange(8)).ravel()


def _split_params(params: np.ndarray, n_voxels: int):
    p = params.reshape(n_voxels, 7)
    with np.errstate(over="ignore"):  # saturated logits map cleanly to 0/1
        alpha = 1.0 / (1.0 + np.exp(-p[:, 0]))
    theta, phi = p[:, 1], p[:, 2]
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    axis = np.stack([st * cp, st * sp, ct], axis=-1)
    sharp = np.exp(p[:, 3])
    eta = np.exp(p[:, 4:7])
    return p, alpha, axis, sharp, eta, (st, ct, sp, cp)


def _g4_and_grad(target: np.ndarray, rendered: np.ndarray):
    """Scale-invariant log-space MSE of (target, rendered) and d/d rendered.

    The least-squares scale multiplies the rendered side; its dependence on
    the rendered values is differentiated through (no envelope shortcut,
    since the scale is optimal in linear space but the loss is in log space).
    """
    with np.errstate(over="ignore"):
        sbb = float(np.sum(rendered * rendered))
    if not math.isfinite(sbb):  # exploded proposal; let the driver reject it
        return math.inf, np.zeros_like(rendered)
    if sbb < 1e-300:
        log_a = np.log1p(target)
        return float(np.mean(log_a * log_a)), np.zeros_like(rendered)
    sab = float(np.sum(target * rendered))
    tau = sab / sbb
    scaled = tau * rendered + 1.0
    diff = np.log1p(target) - np.log(scaled)
    n = diff.size
    value = float(np.mean(diff * diff))
    base = (-2.0 / n) * diff / scaled
    grad = base * tau
    dtau = float(np.sum(base * rendered))
    grad = grad + dtau * (target - 2.0 * tau * rendered) / sbb
    return value, grad


def vsg_fit_objective(params: np.ndarray, problem: VSGFitProblem):
    """Fit objective beta1 * sum_targets g4 + beta2 * mean_vox(-alpha ln alpha)
    and its analytic gradient with respect to the raw parameters."""
    with np.errstate(over="ignore", invalid="ignore"):
        value, grad = _vsg_objective_impl(params, problem)
    if not math.isfinite(value) or not np.all(np.isfinite(grad)):
        return math.inf, np.zeros_like(np.asarray(params, dtype=np.float64))
    return value, grad


def _vsg_objective_impl(params: np.ndarray, problem: VSGFitProblem):
    opts = problem.options
    nvox = problem.n_voxels
    p, alpha_v, axis_v, sharp_v, eta_v, trig = _split_params(params, nvox)
    idx, w = problem.idx, problem.weights

    # one gather for all 8 interpolated fields: alpha, axis xyz, sharp, eta
    fields = np.concatenate([alpha_v[:, None], axis_v, sharp_v[:, None], eta_v],
                            axis=-1)                               # (V, 8)
    interp = np.einsum("rnk,rnkc->rnc", w, fields[idx])            # (R, N, 8)
    alpha = interp[..., 0]
    u = interp[..., 1:4]
    sharp = interp[..., 4]
    eta = interp[..., 5:8]
    norm = np.linalg.norm(u, axis=-1, keepdims=True)
    safe = np.where(norm > 1e-12, norm, 1.0)
    axis = u / safe

    dots = np.sum(axis * problem.neg_dirs[:, None, :], axis=-1)
    expo = np.exp(sharp * (dots - 1.0))
    emit = eta * expo[..., None]
    trans = np.cumprod(1.0 - alpha, axis=-1)
    excl = np.concatenate([np.ones((alpha.shape[0], 1)), trans[:, :-1]], axis=-1)
    wgt = excl * alpha
    contrib = wgt[..., None] * emit
    rendered = np.sum(contrib, axis=1)

    value = 0.0
    d_rendered = np.empty_like(rendered)
    for sl, target in zip(problem.slices, problem.target_flat):
        v, g = _g4_and_grad(target, rendered[sl])
        value += opts.beta_fit * v
        d_rendered[sl] = opts.beta_fit * g

    # entropy regularizer -alpha ln alpha, mean over voxels
    tiny = alpha_v > 1e-290
    ent = np.where(tiny, -alpha_v * np.log(np.where(tiny, alpha_v, 1.0)), 0.0)
    value += opts.beta_entropy * float(np.mean(ent))
    d_alpha_reg = opts.beta_entropy / nvox * np.where(
        tiny, -np.log(np.where(tiny, alpha_v, 1.0)) - 1.0, 0.0)

    # tail_n = radiance composited from samples > n, non-recursive suffix form
    suffix = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1]
    tail_next = np.concatenate(
        [suffix[:, 1:], np.zeros((alpha.shape[0], 1, 3))], axis=1)
    tsafe = np.where(trans > 1e-290, trans, 1.0)
    tail = np.where(trans[..., None] > 1e-290, tail_next / tsafe[..., None], 0.0)
    d_emit = wgt[..., None] * d_rendered[:, None, :]
    d_alpha = np.sum(d_rendered[:, None, :] * excl[..., None] * (emit - tail),
                     axis=-1)

    d_expo = np.sum(d_emit * eta, axis=-1)
    d_eta = d_emit * expo[..., None]
    d_sharp = d_expo * expo * (dots - 1.0)
    d_dots = d_expo * expo * sharp
    d_axis = d_dots[..., None] * problem.neg_dirs[:, None, :]
    d_u = (d_axis - axis * np.sum(axis * d_axis, axis=-1, keepdims=True)) / safe
    d_u = np.where(norm > 1e-12, d_u, 0.0)

    # one scatter for all 8 per-sample gradients, keyed by voxel * 8 + field
    sample_grads = np.concatenate(
        [d_alpha[..., None], d_u, d_sharp[..., None], d_eta], axis=-1)  # (R, N, 8)
    weighted = w[..., None] * sample_grads[..., None, :]                # (R, N, 8, 8)
    accum = np.bincount(problem.scatter_keys, weights=weighted.ravel(),
                        minlength=nvox * 8).reshape(nvox, 8)
    d_alpha_vox = d_alpha_reg + accum[:, 0]
    d_axis_vox = accum[:, 1:4]
    d_sharp_vox = accum[:, 4]
    d_eta_vox = accum[:, 5:8]

    st, ct, sp, cp = trig
    grad = np.empty_like(p)
    grad[:, 0] = d_alpha_vox * alpha_v * (1.0 - alpha_v)
    grad[:, 1] = (d_axis_vox[:, 0] * ct * cp + d_axis_vox[:, 1] * ct * sp
                  - d_axis_vox[:, 2] * st)
    grad[:, 2] = -d_axis_vox[:, 0] * st * sp + d_axis_vox[:, 1] * st * cp
    grad[:, 3] = d_sharp_vox * sharp_v
    grad[:, 4:7] = d_eta_vox * eta_v
    return value, grad.ravel()


def _fibonacci_sphere(count: int) -> np.ndarray:
    k = np.arange(count)
    z = 1.0 - (2.0 * k + 1.0) / count
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phi = k * golden
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _initial_params(problem: VSGFitProblem) -> np.ndarray:
    opts = problem.options
    nvox = problem.n_voxels
    mean = np.concatenate(problem.target_flat).mean(axis=0)
    axes = _fibonacci_sphere(nvox)
    p = np.empty((nvox, 7))
    p[:, 0] = math.log(opts.init_alpha / (1.0 - opts.init_alpha))
    p[:, 1] = np.arccos(np.clip(axes[:, 2], -1.0, 1.0))
    p[:, 2] = np.arctan2(axes[:, 1], axes[:, 0])
    p[:, 3] = math.log(max(opts.init_sharpness, 1e-6))
    p[:, 4:7] = np.log(np.maximum(mean, 1e-4))
    return p.ravel()


# export range for log parameters, as in the SG fitter: drifting
# zero-influence coordinates must stay finite in float32 volume files
_LOG_PARAM_LIMIT = 30.0


def _params_to_volume(params: np.ndarray, problem: VSGFitProblem) -> VSGVolume:
    _, alpha, _, _, _, _ = _split_params(params, problem.n_voxels)
    p = params.reshape(problem.n_voxels, 7)
    theta = np.mod(p[:, 1], 2.0 * math.pi)
    phi = p[:, 2].copy()
    over = theta > math.pi
    theta[over] = 2.0 * math.pi - theta[over]
    phi[over] += math.pi
    phi = np.mod(phi + math.pi, 2.0 * math.pi) - math.pi
    sharp = np.exp(np.clip(p[:, 3], -_LOG_PARAM_LIMIT, _LOG_PARAM_LIMIT))
    eta = np.exp(np.clip(p[:, 4:7], -_LOG_PARAM_LIMIT, _LOG_PARAM_LIMIT))
    voxels = np.stack([np.clip(alpha, 0.0, 1.0), theta, phi, sharp,
                       eta[:, 0], eta[:, 1], eta[:, 2]], axis=-1)
    return VSGVolume(bounds=problem.bounds,
                     voxels=voxels.reshape(problem.dims + (7,)))


def vsg_fit(targets, dims, bounds: Bounds,
            options: VSGFitOptions | None = None) -> VSGFitResult:
    """Fit a VSG volume to hemispherical env-map targets by monotone gradient
    descent through the compositing chain.

    ``targets`` is a sequence of EnvTarget (or (point, frame, EnvMapGrid)
    tuples). The objective is beta_fit * g4 per target plus beta_entropy
    times the opacity entropy, which pushes alpha toward {0, 1}. A run that
    fails to improve on the initialization is returned with
    ``report.converged`` False.
    """
    options = options or VSGFitOptions()
    problem = VSGFitProblem(targets, dims, bounds, options)
    result = minimize_monotone(
        lambda p: vsg_fit_objective(p, problem),
        _initial_params(problem),
        max_iters=options.max_iters,
        step=options.step,
        grow=options.grow,
        shrink=options.shrink,
        objective_tol=options.objective_tol,
    )
    return VSGFitResult(volume=_params_to_volume(result.x, problem),
                        report=result.report)
