"""Per-pixel Gaussian depth distributions and the Gaussian point clouds they induce."""

from __future__ import annotations

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

from .errors import ContractViolation, DomainError, is_concrete
from .geometry import (
    SIGMA_PIXEL,
    CameraIntrinsics,
    Gaussian3,
    _backproject,
    _propagate_covariance,
)

#: lower bound applied to sigma when it is read back from log-space
SIGMA_MIN = 1e-3


@dataclass(frozen=True, eq=False)
class DepthDistribution:
    """Mean and standard deviation rasters, both ``(height, width)`` in meters."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if jnp.shape(self.mean) != jnp.shape(self.std):
            raise ContractViolation(
                f"mean and std rasters differ in shape: {jnp.shape(self.mean)} vs {jnp.shape(self.std)}"
            )
        if is_concrete(self.mean) and np.any(np.asarray(self.mean) <= 0):
            raise DomainError("mean depth must be positive everywhere")
        if is_concrete(self.std) and np.any(np.asarray(self.std) < 0):
            raise DomainError("depth std must be non-negative everywhere")

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(jnp.shape(self.mean))

    @classmethod
    def from_log_std(cls, mean, log_std, sigma_min: float = SIGMA_MIN) -> "DepthDistribution":
        return cls(mean, std_from_log(log_std, sigma_min))


def std_from_log(log_std, sigma_min: float = SIGMA_MIN):
    return jnp.maximum(jnp.exp(log_std), sigma_min)


@dataclass(frozen=True, eq=False)
class NoiseField:
    """Standard-normal raster used by the reparameterized depth sample."""

    values: np.ndarray
    seed: int | None = None

    @classmethod
    def draw(cls, shape, seed: int) -> "NoiseField":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal(shape), seed)

    @classmethod
    def zeros(cls, shape) -> "NoiseField":
        return cls(np.zeros(shape), None)


@dataclass(frozen=True, eq=False)
class GaussianCloud:
    """``N`` independent 3D Gaussians indexed by the pixel they came from.

    ``pixels`` is ``(N, 2)`` integer ``(u, v)``; ``means`` is ``(N, 3)`` and
    ``covs`` is ``(N, 3, 3)``.
    """

    pixels: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        n = len(self.pixels)
        if n < 1 or jnp.shape(self.means) != (n, 3) or jnp.shape(self.covs) != (n, 3, 3):
            raise ContractViolation("cloud arrays must share a leading length N >= 1")

    def __len__(self) -> int:
        return len(self.pixels)

    def __getitem__(self, i) -> Gaussian3:
        return Gaussian3(self.means[i], self.covs[i])

    def transformed(self, rotation, translation) -> "GaussianCloud":
        R = jnp.asarray(rotation)
        means = jnp.einsum("ij,nj->ni", R, self.means) + translation
        covs = jnp.einsum("ij,njk,lk->nil", R, self.covs, R)
        return GaussianCloud(self.pixels, means, covs)


def sample_depth(d: DepthDistribution, noise: NoiseField):
    """Reparameterized draw ``mean + eps * std`` (one sample)."""
    if jnp.shape(noise.values) != d.shape:
        raise ContractViolation(f"noise shape {jnp.shape(noise.values)} does not match raster {d.shape}")
    return d.mean + noise.values * d.std


def _check_pixels(pixels, shape):
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.shape[1] != 2:
        raise ContractViolation("pixels must be an (N, 2) array of (u, v)")
    h, w = shape
    u, v = pixels[:, 0], pixels[:, 1]
    if np.any(u < 0) or np.any(u >= w) or np.any(v < 0) or np.any(v >= h):
        raise ContractViolation("pixel outside the raster")
    return pixels.astype(int)


def _lift(mean, std, pixels, intr, sigma_u, sigma_v):
    u = pixels[:, 0]
    v = pixels[:, 1]
    mu = mean[v, u]
    sd = std[v, u]
    uf = u.astype(float)
    vf = v.astype(float)
    means = _backproject(uf, vf, mu, intr)
    covs = _propagate_covariance(uf, vf, mu, sd, sigma_u, sigma_v, intr)
    return means, covs


def lift_cloud(
    d: DepthDistribution,
    k: CameraIntrinsics,
    pixels,
    sigma_u: float = SIGMA_PIXEL,
    sigma_v: float = SIGMA_PIXEL,
) -> GaussianCloud:
    """Gaussian point cloud of the depth distribution at the given pixels.

    Means are back-projected mean depths; covariances propagate
    ``(sigma_u, sigma_v, std)`` through the pixel-to-camera Jacobian.
    """
    pixels = _check_pixels(pixels, d.shape)
    means, covs = _lift(jnp.asarray(d.mean), jnp.asarray(d.std), pixels, k.params, sigma_u, sigma_v)
    return GaussianCloud(pixels, means, covs)


def entropy_term(c: GaussianCloud):
    """``0.5 * sum_i log det(cov_i)``, the covariance-dependent part of the
    negative entropy of the cloud."""
    sign, logdet = jnp.linalg.slogdet(jnp.asarray(c.covs))
    if is_concrete(sign) and (np.any(np.asarray(sign) <= 0) or not np.all(np.isfinite(logdet))):
        raise DomainError("covariance is singular; clamp sigma before computing the entropy")
    return 0.5 * jnp.sum(logdet)


def _mahalanobis_sq(diff, cov):
    L = jnp.linalg.cholesky(cov)
    y = jnp.linalg.solve(L, diff[..., None])[..., 0]
    return jnp.sum(y * y, axis=-1)


def mahalanobis_sq(x, g: Gaussian3):
    """Squared Mahalanobis distance ``(x - mu)^T cov^-1 (x - mu)``."""
    cov = jnp.asarray(g.cov, dtype=float)
    if is_concrete(cov):
        if np.linalg.eigvalsh(np.asarray(cov))[0] <= 0:
            raise DomainError("covariance is not positive definite")
    return _mahalanobis_sq(jnp.asarray(x, float) - jnp.asarray(g.mean, float), cov)
