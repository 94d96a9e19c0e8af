"""Spherical-Gaussian lobes, environments, hemispherical radiance grids,
and gradient-based SG fitting.

A lobe stores its axis as spherical angles (theta, phi) and is evaluated as a
unit 3-vector, radiance eta * exp(lambda * (dot(l, axis) - 1)). Environments
sum lobes scaled by per-lobe visibility in [0, 1]. Radiance grids discretize
the upper hemisphere around a local frame in equirectangular fashion
(elevation rows x azimuth columns, texel directions at cell centers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .optim import FitReport, minimize_monotone

UNIT_NORM_TOL = 1e-6


def _as_unit(vector, tol: float = UNIT_NORM_TOL) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"direction must have unit norm, got {norm!r}")
    return v


def normalize(vector) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def spherical_to_unit(theta: float, phi: float) -> np.ndarray:
    """Unit vector for polar angle theta (from +z) and azimuth phi."""
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def unit_to_spherical(direction) -> tuple[float, float]:
    d = np.asarray(direction, dtype=np.float64)
    theta = math.acos(min(1.0, max(-1.0, float(d[2]))))
    phi = math.atan2(float(d[1]), float(d[0]))
    if phi >= math.pi:  # keep phi in [-pi, pi)
        phi -= 2.0 * math.pi
    return theta, phi


@dataclass(frozen=True)
class Frame:
    """Right-handed orthonormal basis; ``tangent x bitangent == normal``."""

    normal: np.ndarray
    tangent: np.ndarray
    bitangent: np.ndarray

    def __post_init__(self):
        n = _as_unit(self.normal)
        t = _as_unit(self.tangent)
        b = _as_unit(self.bitangent)
        for a, c, name in ((n, t, "normal/tangent"), (n, b, "normal/bitangent"),
                           (t, b, "tangent/bitangent")):
            if abs(float(np.dot(a, c))) > 1e-9:
                raise ValueError(f"frame vectors {name} are not orthogonal")
        if np.linalg.norm(np.cross(t, b) - n) > 1e-9:
            raise ValueError("frame is not right-handed (tangent x bitangent != normal)")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "tangent", t)
        object.__setattr__(self, "bitangent", b)

    @staticmethod
    def from_normal(normal) -> "Frame":
        """Build a deterministic frame around ``normal``."""
        n = normalize(normal)
        ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        t = normalize(np.cross(ref, n))
        b = np.cross(n, t)
        return Frame(normal=n, tangent=t, bitangent=b)


@dataclass(frozen=True)
class SGLobe:
    """One spherical-Gaussian radiance lobe."""

    axis_theta: float
    axis_phi: float
    sharpness: float
    intensity: tuple[float, float, float]

    def __post_init__(self):
        if not (0.0 <= self.axis_theta <= math.pi):
            raise ValueError(f"axis_theta must lie in [0, pi], got {self.axis_theta}")
        if not (-math.pi <= self.axis_phi < math.pi):
            raise ValueError(f"axis_phi must lie in [-pi, pi), got {self.axis_phi}")
        if not (math.isfinite(self.sharpness) and self.sharpness >= 0.0):
            raise ValueError(f"sharpness must be finite and >= 0, got {self.sharpness}")
        intensity = tuple(float(c) for c in self.intensity)
        if len(intensity) != 3 or any(not math.isfinite(c) or c < 0.0 for c in intensity):
            raise ValueError(f"intensity must be 3 finite nonnegative values, got {self.intensity}")
        object.__setattr__(self, "intensity", intensity)

    def unit_axis(self) -> np.ndarray:
        return spherical_to_unit(self.axis_theta, self.axis_phi)


@dataclass(frozen=True)
class SGEnvironment:
    """An ordered set of SG lobes with per-lobe visibility in [0, 1]."""

    lobes: tuple[SGLobe, ...]
    visibility: tuple[float, ...] = ()

    def __post_init__(self):
        lobes = tuple(self.lobes)
        if len(lobes) < 1:
            raise ValueError("an environment needs at least one lobe")
        vis = tuple(float(v) for v in self.visibility) if self.visibility else (1.0,) * len(lobes)
        if len(vis) != len(lobes):
            raise ValueError(f"{len(lobes)} lobes but {len(vis)} visibility values")
        if any(not (0.0 <= v <= 1.0) for v in vis):
            raise ValueError("every visibility value must lie in [0, 1]")
        object.__setattr__(self, "lobes", lobes)
        object.__setattr__(self, "visibility", vis)

    def __len__(self) -> int:
        return len(self.lobes)

    def axes(self) -> np.ndarray:
        return np.stack([lobe.unit_axis() for lobe in self.lobes])

    def sharpness(self) -> np.ndarray:
        return np.array([lobe.sharpness for lobe in self.lobes])

    def intensities(self) -> np.ndarray:
        return np.array([lobe.intensity for lobe in self.lobes])


@dataclass(frozen=True)
class EnvMapGrid:
    """Discrete radiance map over the upper hemisphere of ``frame``.

    Rows index elevation from the normal (row 0 nearest the pole), columns
    index azimuth in [-pi, pi); texels hold RGB radiance at cell centers.
    """

    width: int
    height: int
    frame: Frame
    texels: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be at least 1x1")
        texels = np.asarray(self.texels, dtype=np.float64)
        if texels.shape != (self.height, self.width, 3):
            raise ValueError(
                f"texels must have shape ({self.height}, {self.width}, 3), got {texels.shape}")
        if not np.all(np.isfinite(texels)) or np.any(texels < 0.0):
            raise ValueError("texel values must be finite and >= 0")
        object.__setattr__(self, "texels", texels)

    def directions(self) -> np.ndarray:
        return texel_directions(self.height, self.width, self.frame)

    def solid_angles(self) -> np.ndarray:
        return texel_solid_angles(self.height, self.width)


def texel_angles(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell-center (theta, phi) for an equirectangular hemisphere grid."""
    theta = (np.arange(height) + 0.5) * (0.5 * math.pi / height)
    phi = -math.pi + (np.arange(width) + 0.5) * (2.0 * math.pi / width)
    return theta, phi


def texel_directions(height: int, width: int, frame: Frame) -> np.ndarray:
    """World-space unit directions at texel centers, shape (height, width, 3)."""
    theta, phi = texel_angles(height, width)
    st = np.sin(theta)[:, None]
    local = (np.cos(phi)[None, :, None] * frame.tangent
             + np.sin(phi)[None, :, None] * frame.bitangent)
    dirs = st[..., None] * local + np.cos(theta)[:, None, None] * frame.normal
    return dirs


def texel_solid_angles(height: int, width: int) -> np.ndarray:
    """Exact per-row texel solid angles; rows sum to 2*pi over the grid."""
    edges = np.arange(height + 1) * (0.5 * math.pi / height)
    return (2.0 * math.pi / width) * (np.cos(edges[:-1]) - np.cos(edges[1:]))


def eval_sg(lobe: SGLobe, direction) -> np.ndarray:
    """Lobe radiance eta * exp(sharpness * (dot(direction, axis) - 1)).

    The exponent uses dot - 1 = -|direction - axis|^2 / 2 (exact for unit
    vectors), which avoids cancellation near the axis and returns eta
    bitwise when ``direction`` equals the axis.
    """
    d = _as_unit(direction)
    delta = d - lobe.unit_axis()
    dot_minus_one = -0.5 * float(delta @ delta)
    return np.asarray(lobe.intensity) * math.exp(lobe.sharpness * dot_minus_one)


def eval_env(env: SGEnvironment, direction) -> np.ndarray:
    """Visibility-scaled sum of all lobe radiances in ``direction``."""
    d = _as_unit(direction)
    delta = env.axes() - d
    dots_minus_one = -0.5 * np.sum(delta * delta, axis=-1)
    weights = np.asarray(env.visibility) * np.exp(env.sharpness() * dots_minus_one)
    return weights @ env.intensities()


def rasterize_env(env: SGEnvironment, height: int, width: int, frame: Frame) -> EnvMapGrid:
    """Evaluate ``env`` at every texel-center direction of the hemisphere grid.

    Texels are produced by per-texel ``eval_env`` calls, so the grid agrees
    with direct evaluation exactly (same code path).
    """
    if height < 1 or width < 1:
        raise ValueError("resolution must be at least 1x1")
    dirs = texel_directions(height, width, frame)
    texels = np.empty((height, width, 3))
    for i in range(height):
        for j in range(width):
            texels[i, j] = eval_env(env, dirs[i, j])
    return EnvMapGrid(width=width, height=height, frame=frame, texels=texels)


def fibonacci_hemisphere(count: int) -> np.ndarray:
    """``count`` deterministic, roughly uniform directions with z > 0."""
    k = np.arange(count)
    # z in (0, 1), golden-angle azimuth; offsets keep points off the pole
    z = (k + 0.5) / count
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phi = k * golden
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


# ---------------------------------------------------------------------------
# Fitting. Internal parameterization per lobe: (theta, phi, log sharpness,
# log intensity rgb); positivity comes from the exponential map, never from
# clamping, so gradients stay smooth.
# ---------------------------------------------------------------------------

_PARAMS_PER_LOBE = 6


@dataclass
class SGFitOptions:
    max_iters: int = 2000
    step: float = 0.25
    grow: float = 1.15
    shrink: float = 0.5
    objective_tol: float = 0.0
    init: SGEnvironment | None = None
    min_sharpness_init: float = 1e-4
    min_intensity_init: float = 1e-6


@dataclass
class SGFitResult:
    environment: SGEnvironment
    report: FitReport


def _env_to_params(env: SGEnvironment, floor_sharp: float, floor_int: float) -> np.ndarray:
    params = np.empty((len(env), _PARAMS_PER_LOBE))
    for s, lobe in enumerate(env.lobes):
        params[s, 0] = lobe.axis_theta
        params[s, 1] = lobe.axis_phi
        params[s, 2] = math.log(max(lobe.sharpness, floor_sharp))
        params[s, 3:6] = np.log(np.maximum(lobe.intensity, floor_int))
    return params


# export range for log parameters: coordinates with negligible objective
# influence can drift during optimization; exp(+-30) keeps the emitted
# values finite in float32 files without touching data-driven lobes
_LOG_PARAM_LIMIT = 30.0


def _params_to_env(params: np.ndarray) -> SGEnvironment:
    lobes = []
    for s in range(params.shape[0]):
        theta = float(params[s, 0]) % (2.0 * math.pi)
        phi = float(params[s, 1])
        if theta > math.pi:  # fold theta back into [0, pi], rotating phi
            theta = 2.0 * math.pi - theta
            phi += math.pi
        phi = (phi + math.pi) % (2.0 * math.pi) - math.pi
        logs = np.clip(params[s, 2:6], -_LOG_PARAM_LIMIT, _LOG_PARAM_LIMIT)
        lobes.append(SGLobe(
            axis_theta=theta,
            axis_phi=phi,
            sharpness=float(np.exp(logs[0])),
            intensity=tuple(np.exp(logs[1:4])),
        ))
    return SGEnvironment(lobes=tuple(lobes))


def _lobe_batch(params: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    theta = params[:, 0]
    phi = params[:, 1]
    st, ct = np.sin(theta), np.cos(theta)
    axes = np.stack([st * np.cos(phi), st * np.sin(phi), ct], axis=-1)
    return axes, np.exp(params[:, 2]), np.exp(params[:, 3:6])


def eval_lobes_batch(params: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Radiance of the parameterized lobes summed at each of ``dirs`` (T, 3)."""
    axes, sharp, eta = _lobe_batch(params)
    expo = np.exp(sharp[None, :] * (dirs @ axes.T - 1.0))
    return expo @ eta


def sg_fit_objective(params: np.ndarray, target: np.ndarray,
                     dirs: np.ndarray) -> tuple[float, np.ndarray]:
    """Scale-invariant log-space MSE (tau fixed to 1) and its gradient.

    ``params`` is (S, 6) internal lobe parameters, ``target`` (T, 3) texel
    radiance, ``dirs`` (T, 3) texel-center directions. Returns the objective
    mean((log(R+1) - log(target+1))^2) and d/dparams, both analytic.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        value, grad = _sg_objective_impl(params, target, dirs)
    if not math.isfinite(value) or not np.all(np.isfinite(grad)):
        return math.inf, np.zeros_like(np.asarray(params, dtype=np.float64)).ravel()
    return value, grad


def _sg_objective_impl(params: np.ndarray, target: np.ndarray,
                       dirs: np.ndarray) -> tuple[float, np.ndarray]:
    params = params.reshape(-1, _PARAMS_PER_LOBE)
    axes, sharp, eta = _lobe_batch(params)
    dots = dirs @ axes.T                      # (T, S)
    expo = np.exp(sharp[None, :] * (dots - 1.0))
    radiance = expo @ eta                     # (T, 3)

    log_r = np.log1p(radiance)
    log_t = np.log1p(target)
    diff = log_r - log_t
    n_elem = diff.size
    value = float(np.mean(diff * diff))

    # d value / d radiance
    g_rad = (2.0 / n_elem) * diff / (1.0 + radiance)          # (T, 3)
    d_eta = expo.T @ g_rad                                    # (S, 3)
    w = g_rad @ eta.T                                         # (T, S) sum_c g*eta
    we = w * expo
    d_sharp = np.sum(we * (dots - 1.0), axis=0)               # (S,)
    d_axis = we.T @ dirs * sharp[:, None]                     # (S, 3)

    theta, phi = params[:, 0], params[:, 1]
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    d_theta = d_axis[:, 0] * ct * cp + d_axis[:, 1] * ct * sp - d_axis[:, 2] * st
    d_phi = -d_axis[:, 0] * st * sp + d_axis[:, 1] * st * cp

    grad = np.empty_like(params)
    grad[:, 0] = d_theta
    grad[:, 1] = d_phi
    grad[:, 2] = d_sharp * sharp          # chain through log-parameterization
    grad[:, 3:6] = d_eta * eta
    return value, grad.ravel()


def default_sg_init(target: EnvMapGrid, num_lobes: int,
                    sharpness: float = 5.0) -> SGEnvironment:
    """Deterministic start: Fibonacci-spread axes in the hemisphere frame,
    fixed sharpness, intensity set to the target mean."""
    local_axes = fibonacci_hemisphere(num_lobes)
    basis = np.stack([target.frame.tangent, target.frame.bitangent,
                      target.frame.normal])
    mean = tuple(np.maximum(target.texels.reshape(-1, 3).mean(axis=0), 1e-6))
    lobes = []
    for axis_local in local_axes:
        theta, phi = unit_to_spherical(axis_local @ basis)
        lobes.append(SGLobe(axis_theta=theta, axis_phi=phi,
                            sharpness=sharpness, intensity=mean))
    return SGEnvironment(lobes=tuple(lobes))


def sg_fit(target: EnvMapGrid, num_lobes: int,
           options: SGFitOptions | None = None) -> SGFitResult:
    """Fit ``num_lobes`` SG lobes to ``target`` by monotone gradient descent.

    Minimizes the scale-invariant log-space MSE (scale fixed to 1, all-ones
    mask) between the rasterized result and the target, with analytic
    gradients. A run that fails to reduce the objective below its initial
    value is still returned, flagged via ``report.converged``.
    """
    if num_lobes < 1:
        raise ValueError("num_lobes must be >= 1")
    if not np.all(np.isfinite(target.texels)):
        raise ValueError("target texels must all be finite")
    options = options or SGFitOptions()

    init = options.init or default_sg_init(target, num_lobes)
    if len(init) != num_lobes:
        raise ValueError(f"init has {len(init)} lobes, expected {num_lobes}")
    params0 = _env_to_params(init, options.min_sharpness_init,
                             options.min_intensity_init)

    dirs = target.directions().reshape(-1, 3)
    flat_target = target.texels.reshape(-1, 3)
    result = minimize_monotone(
        lambda p: sg_fit_objective(p, flat_target, dirs),
        params0.ravel(),
        max_iters=options.max_iters,
        step=options.step,
        grow=options.grow,
        shrink=options.shrink,
        objective_tol=options.objective_tol,
    )
    env = _params_to_env(result.x.reshape(-1, _PARAMS_PER_LOBE))
    return SGFitResult(environment=env, report=result.report)
