"""View synthesis by inverse warping and the photometric / regularization losses.

Images are ``(height, width, channels)`` float rasters in ``[0, 1]``.
"""

from __future__ import annotations

import jax.numpy as jnp
import numpy as np

from .depthdist import DepthDistribution
from .errors import ContractViolation, is_concrete
from .geometry import CameraIntrinsics, _apply_rigid, _backproject, _project

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
BETA = 0.85


def as_image(x):
    x = jnp.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[..., None]
    if x.ndim != 3 or min(x.shape) < 1:
        raise ContractViolation(f"image must be (height, width, channels), got {x.shape}")
    return jnp.clip(x, 0.0, 1.0)


def _same_shape(a, b):
    if jnp.shape(a) != jnp.shape(b):
        raise ContractViolation(f"shape mismatch: {jnp.shape(a)} vs {jnp.shape(b)}")


def pixel_grid(height: int, width: int):
    """Float ``(u, v)`` rasters of pixel-center coordinates."""
    v, u = jnp.meshgrid(jnp.arange(height, dtype=float), jnp.arange(width, dtype=float), indexing="ij")
    return u, v


# ---------------------------------------------------------------------------
# warping


def project_map(points, k: CameraIntrinsics):
    """Source-image coordinates ``(u_hat, v_hat)`` of a raster of 3D points.

    ``points`` has shape ``(height, width, 3)`` and is expressed in the
    source camera frame.  Returns ``(coords, valid)``; entries with
    ``z <= 0`` are flagged invalid.
    """
    return _project(jnp.asarray(points, float), k.params)


def _bilinear_sample(img, coords):
    h, w = img.shape[:2]
    x = jnp.clip(coords[..., 0], 0.0, w - 1.0)
    y = jnp.clip(coords[..., 1], 0.0, h - 1.0)
    x0 = jnp.floor(x)
    y0 = jnp.floor(y)
    wx = (x - x0)[..., None]
    wy = (y - y0)[..., None]
    x0i = x0.astype(int)
    y0i = y0.astype(int)
    x1i = jnp.minimum(x0i + 1, w - 1)
    y1i = jnp.minimum(y0i + 1, h - 1)
    top = img[y0i, x0i] * (1.0 - wx) + img[y0i, x1i] * wx
    bottom = img[y1i, x0i] * (1.0 - wx) + img[y1i, x1i] * wx
    return top * (1.0 - wy) + bottom * wy


BOUNDS_TOL = 1e-9  # absorbs round-trip rounding at the raster edge


def in_bounds(coords, height: int, width: int):
    return (
        (coords[..., 0] >= -BOUNDS_TOL)
        & (coords[..., 0] <= width - 1.0 + BOUNDS_TOL)
        & (coords[..., 1] >= -BOUNDS_TOL)
        & (coords[..., 1] <= height - 1.0 + BOUNDS_TOL)
    )


def bilinear_sample(img, coords, valid=None):
    """Bilinear lookup of ``img`` at fractional ``coords`` ``(..., 2)``.

    Out-of-range coordinates are clamped to the border.  Entries flagged
    invalid are returned as zeros.  Returns ``(sampled, mask)``.
    """
    img = as_image(img)
    coords = jnp.asarray(coords, float)
    out = _bilinear_sample(img, coords)
    if valid is None:
        valid = jnp.ones(coords.shape[:-1], dtype=bool)
    out = jnp.where(valid[..., None], out, 0.0)
    return out, valid


def _warp(src, depth, R, t, intr):
    """Synthesize the target view from ``src`` given target depth and the
    target-to-source transform.  ``valid`` requires ``z > 0`` and an in-bounds
    source location."""
    h, w = depth.shape
    u, v = pixel_grid(h, w)
    pts = _apply_rigid(R, t, _backproject(u, v, depth, intr))
    coords, valid = _project(pts, intr)
    valid = valid & in_bounds(coords, h, w)
    warped = _bilinear_sample(src, coords)
    return warped, valid


def warp_image(src, depth, transform, k: CameraIntrinsics):
    """Inverse-warp ``src`` into the target view; see ``_warp``."""
    return _warp(as_image(src), jnp.asarray(depth, float), jnp.asarray(transform.rotation),
                 jnp.asarray(transform.translation), k.params)


# ---------------------------------------------------------------------------
# photometric energy


def _box3(x):
    """3x3 mean with reflection padding, over the two leading axes (separable)."""
    p = jnp.pad(x, ((1, 1), (1, 1)) + ((0, 0),) * (x.ndim - 2), mode="reflect")
    h, w = x.shape[:2]
    rows = p[:, 0:w] + p[:, 1:w + 1] + p[:, 2:w + 2]
    return (rows[0:h] + rows[1:h + 1] + rows[2:h + 2]) / 9.0


def _ssim_channels(a, b):
    mu_a = _box3(a)
    mu_b = _box3(b)
    var_a = _box3(a * a) - mu_a**2
    var_b = _box3(b * b) - mu_b**2
    cov_ab = _box3(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov_ab + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return jnp.clip(num / den, -1.0, 1.0)


def _photometric_energy(a, b, beta=BETA):
    dssim = (1.0 - _ssim_channels(a, b)) / 2.0
    l1 = jnp.abs(a - b)
    return jnp.mean(beta * dssim + (1.0 - beta) * l1, axis=-1)


def ssim(a, b):
    """Per-pixel SSIM over 3x3 windows, averaged over channels."""
    a, b = as_image(a), as_image(b)
    _same_shape(a, b)
    return jnp.mean(_ssim_channels(a, b), axis=-1)


def photometric_energy(i_t, i_hat, beta: float = BETA):
    """Per-pixel ``beta/2 (1 - SSIM) + (1 - beta) |I - I_hat|`` (channel mean)."""
    i_t, i_hat = as_image(i_t), as_image(i_hat)
    _same_shape(i_t, i_hat)
    return _photometric_energy(i_t, i_hat, beta)


def min_reprojection_automask(losses_prev, losses_next, identity_prev, identity_next,
                              valid_prev=None, valid_next=None):
    """Per-pixel minimum over the two sources, auto-masked.

    A pixel contributes only where the un-warped (identity) loss is strictly
    larger than the minimum reprojection loss; ties are masked out.  Pixels
    with no valid source are masked out too.  Returns ``(masked_map, mask)``
    where ``masked_map`` is zero outside the mask.
    """
    for other in (losses_next, identity_prev, identity_next):
        _same_shape(losses_prev, other)
    return _min_reprojection_automask(losses_prev, losses_next, identity_prev, identity_next,
                                      valid_prev, valid_next)


def _min_reprojection_automask(lp, ln, ip, in_, valid_prev=None, valid_next=None):
    inf = jnp.inf
    if valid_prev is not None:
        lp = jnp.where(valid_prev, lp, inf)
    if valid_next is not None:
        ln = jnp.where(valid_next, ln, inf)
    reproj = jnp.minimum(lp, ln)
    identity = jnp.minimum(ip, in_)
    mask = (identity > reproj) & jnp.isfinite(reproj)
    return jnp.where(mask, reproj, 0.0), mask


def masked_mean(values, mask):
    return jnp.sum(jnp.where(mask, values, 0.0)) / jnp.maximum(jnp.sum(mask), 1)


# ---------------------------------------------------------------------------
# regularizers


def _smooth_loss(mean, img):
    disp = 1.0 / mean
    disp = disp / jnp.mean(disp)
    gx = jnp.abs(disp[:, :-1] - disp[:, 1:])
    gy = jnp.abs(disp[:-1, :] - disp[1:, :])
    ix = jnp.mean(jnp.abs(img[:, :-1] - img[:, 1:]), axis=-1)
    iy = jnp.mean(jnp.abs(img[:-1, :] - img[1:, :]), axis=-1)
    return jnp.mean(gx * jnp.exp(-ix)) + jnp.mean(gy * jnp.exp(-iy))


def smooth_loss(d, img):
    """Edge-aware first-order smoothness of mean-normalized inverse depth.

    ``d`` may be a :class:`DepthDistribution` or a mean-depth raster.
    """
    mean = d.mean if isinstance(d, DepthDistribution) else d
    mean = jnp.asarray(mean, float)
    img = as_image(img)
    if img.shape[:2] != mean.shape:
        raise ContractViolation("depth and image rasters differ in size")
    if is_concrete(mean) and np.any(np.asarray(mean) <= 0):
        raise ContractViolation("mean depth must be positive")
    return _smooth_loss(mean, img)


def std_reg_loss(d):
    """Mean standard deviation over the raster."""
    std = d.std if isinstance(d, DepthDistribution) else d
    return jnp.mean(jnp.asarray(std, float))
