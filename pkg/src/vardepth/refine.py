"""Sigma-guided depth refinement and the horizontal-flip post-process.

Refinement tries ``N_k`` depth hypotheses ``mean + a_k * std`` per pixel,
``a_k`` equally spaced over ``[-alpha, alpha]``, warps the previous frame
with each, and keeps the hypothesis whose photometric energy is lowest.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np

from .depthdist import DepthDistribution
from .errors import ContractViolation
from .geometry import CameraIntrinsics, RigidTransform
from .photometric import BETA, SSIM_C1, SSIM_C2, _box3, as_image

DEPTH_FLOOR = 0.1
BOUNDS_TOL = 1e-3  # pixels; covers float32 rounding of the projection


@dataclass(frozen=True)
class RefineConfig:
    n_k: int = 10
    alpha: float = 0.2
    include_zero: bool = False
    depth_floor: float = DEPTH_FLOOR
    beta: float = BETA

    def __post_init__(self):
        if self.n_k < 1:
            raise ContractViolation("n_k must be >= 1")
        if self.alpha < 0:
            raise ContractViolation("alpha must be non-negative")
        if self.depth_floor <= 0:
            raise ContractViolation("depth floor must be positive")


def multipliers(cfg: RefineConfig) -> np.ndarray:
    """``a_k = -alpha + 2 alpha (k - 1) / (n_k - 1)``; ``[0]`` for ``n_k = 1``.

    With ``include_zero`` a zero multiplier is appended when missing.
    """
    if cfg.n_k == 1:
        a = np.zeros(1)
    else:
        # symmetric integer numerators keep a_k = -a_(n_k+1-k) exactly
        a = cfg.alpha * (2 * np.arange(cfg.n_k) - (cfg.n_k - 1)) / (cfg.n_k - 1)
    if cfg.include_zero and not np.any(a == 0):
        a = np.append(a, 0.0)
    return a


def _check_rasters(mean, std):
    mean = np.asarray(mean, float)
    std = np.asarray(std, float)
    if mean.shape != std.shape or mean.ndim != 2:
        raise ContractViolation("mean and std must be rasters of one shape")
    return mean, std


def hypothesis_depths(mean, std, cfg: RefineConfig = RefineConfig()) -> list:
    """The ``N_k`` hypothesis rasters, clamped below at the depth floor."""
    mean, std = _check_rasters(mean, std)
    return [np.maximum(mean + a * std, cfg.depth_floor) for a in multipliers(cfg)]


def _gather_bilinear(flat_img, w, h, x, y):
    """Bilinear lookup into an ``(h * w, C)`` image with border clamping."""
    x = jnp.clip(x, 0.0, w - 1.0)
    y = jnp.clip(y, 0.0, h - 1.0)
    x0 = jnp.floor(x)
    y0 = jnp.floor(y)
    wx = (x - x0)[..., None]
    wy = (y - y0)[..., None]
    i00 = y0.astype(jnp.int32) * w + x0.astype(jnp.int32)
    dx = jnp.where(x0 < w - 1, 1, 0)
    dy = jnp.where(y0 < h - 1, w, 0)
    # lerp form keeps constant images exact, so textureless ties stay ties
    a, b = flat_img[i00], flat_img[i00 + dx]
    c, d = flat_img[i00 + dy], flat_img[i00 + dy + dx]
    top = a + wx * (b - a)
    bottom = c + wx * (d - c)
    return top + wy * (bottom - top)


def _energies(target, srcimg, hyps, R, t, intr, beta):
    """Photometric energy of every hypothesis, ``inf`` where the warp is invalid.

    Rays and the SSIM statistics of the target are shared across hypotheses.
    """
    h, w = target.shape[:2]
    fx, fy, cx, cy = intr
    dt = target.dtype
    v, u = jnp.meshgrid(jnp.arange(h, dtype=dt), jnp.arange(w, dtype=dt), indexing="ij")
    rays = jnp.stack([(u - cx) / fx, (v - cy) / fy, jnp.ones_like(u)], -1)
    rr = rays @ R.T  # rotated rays; a point is depth * rr + t
    flat_src = srcimg.reshape(h * w, -1)
    mu_a = _box3(target)
    var_a = _box3(target * target) - mu_a**2

    def one(depth):
        p = depth[..., None] * rr + t
        z = p[..., 2]
        x = fx * p[..., 0] / z + cx
        y = fy * p[..., 1] / z + cy
        valid = (z > 0) & (x >= -BOUNDS_TOL) & (x <= w - 1 + BOUNDS_TOL) & (y >= -BOUNDS_TOL) & (y <= h - 1 + BOUNDS_TOL)
        warped = _gather_bilinear(flat_src, w, h, x, y)
        mu_b = _box3(warped)
        var_b = _box3(warped * warped) - mu_b**2
        cov = _box3(target * warped) - mu_a * mu_b
        num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
        ssim = jnp.clip(num / den, -1.0, 1.0)
        e = jnp.mean(beta * (1 - ssim) / 2 + (1 - beta) * jnp.abs(target - warped), axis=-1)
        return jnp.where(valid, e, jnp.inf)

    return jax.lax.map(one, hyps)


@partial(jax.jit, static_argnames=("intr", "beta"))
def _refine(mean, std, a, floor, target, srcimg, R, t, intr, beta):
    f32 = jnp.float32
    # energies only rank hypotheses, so single precision suffices
    hyps32 = jnp.maximum(mean.astype(f32)[None] + a.astype(f32)[:, None, None] * std.astype(f32)[None], floor)
    e = _energies(target.astype(f32), srcimg.astype(f32), hyps32, R.astype(f32), t.astype(f32), intr, beta)
    best = jnp.argmin(e, axis=0)  # first minimum wins; hypotheses arrive in tie-break order
    chosen = jnp.maximum(mean + a[best] * std, floor)
    return jnp.where(jnp.isfinite(jnp.min(e, axis=0)), chosen, mean)


def refine_depth(d: DepthDistribution, i_t, i_prev, pose: RigidTransform, k: CameraIntrinsics,
                 cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    """Refined mean raster.

    ``pose`` maps points from the current camera into the previous one.
    Each pixel takes the hypothesis with the lowest energy; ties go to the
    smallest ``|a_k|`` (then the negative one).  A pixel whose warp is
    invalid under every hypothesis keeps its mean.
    """
    mean, std = _check_rasters(d.mean, d.std)
    i_t, i_prev = as_image(i_t), as_image(i_prev)
    if i_t.shape != i_prev.shape or i_t.shape[:2] != mean.shape:
        raise ContractViolation("images and depth rasters must share one size")
    a = multipliers(cfg)
    order = np.lexsort((a, np.abs(a)))
    out = _refine(jnp.asarray(mean), jnp.asarray(std), jnp.asarray(a[order]), cfg.depth_floor, i_t, i_prev,
                  jnp.asarray(pose.rotation, float), jnp.asarray(pose.translation, float), tuple(k.params),
                  cfg.beta)
    return np.asarray(out)


# ---------------------------------------------------------------------------
# flip post-process


def flip(x):
    """Mirror a raster or image left-right."""
    return np.asarray(x)[:, ::-1]


def _flip_pair(d: DepthDistribution, d_flipped_input: DepthDistribution):
    if np.shape(d.mean) != np.shape(d_flipped_input.mean):
        raise ContractViolation("flipped-input estimate has a different raster size")
    return np.asarray(d.mean, float), flip(np.asarray(d_flipped_input.mean, float))


def flip_postprocess(d: DepthDistribution, d_flipped_input: DepthDistribution):
    """``(mean, std)`` with ``mean`` the average of the estimate and the
    re-flipped estimate from the flipped image and ``std`` their absolute
    difference."""
    a, b = _flip_pair(d, d_flipped_input)
    return (a + b) / 2, np.abs(a - b)


def flip_average(d: DepthDistribution, d_flipped_input: DepthDistribution) -> DepthDistribution:
    """Average both mean and std with their re-flipped counterparts; used
    before refinement when both post-processes are enabled."""
    a, b = _flip_pair(d, d_flipped_input)
    s = (np.asarray(d.std, float) + flip(np.asarray(d_flipped_input.std, float))) / 2
    return DepthDistribution((a + b) / 2, s)
