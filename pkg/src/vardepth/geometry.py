"""Pinhole camera model, rigid transforms and depth-to-3D covariance lifting.

Pixel convention: ``(u, v)`` are column / row coordinates of pixel centers,
with ``(0, 0)`` at the center of the top-left pixel.  Rasters are stored
row-major with shape ``(height, width)``, so pixel ``(u, v)`` is
``raster[v, u]``.

Every ``_``-prefixed kernel is traceable by JAX and does no validation; the
public functions validate concrete inputs and then call the kernels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jax.numpy as jnp
import numpy as np

from .errors import ContractViolation, DomainError, is_concrete

#: default pixel quantization std on u and v (pixels)
SIGMA_PIXEL = 0.5


@dataclass(frozen=True)
class CameraIntrinsics:
    """Rectified pinhole camera.  ``cx, cy`` are the principal point (u_c, v_c)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def params(self) -> tuple[float, float, float, float]:
        return (self.fx, self.fy, self.cx, self.cy)

    @classmethod
    def centered(cls, width: int, height: int, focal: float) -> "CameraIntrinsics":
        """Square pixels with the principal point at the image center."""
        return cls(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(
            float(d["fx"]),
            float(d["fy"]),
            float(d["cx"]),
            float(d["cy"]),
            None if d.get("width") is None else int(d["width"]),
            None if d.get("height") is None else int(d["height"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "CameraIntrinsics":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Gaussian3:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> R x + t``.  Rotation is checked for orthonormality on construction."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = self.rotation
        t = self.translation
        if jnp.shape(R) != (3, 3) or jnp.shape(t) != (3,):
            raise ContractViolation("rotation must be 3x3 and translation a 3-vector")
        if is_concrete(R):
            R = np.asarray(R, dtype=float)
            if np.abs(R.T @ R - np.eye(3)).max() > 1e-10 or abs(np.linalg.det(R) - 1.0) > 1e-10:
                raise DomainError("rotation is not a proper orthonormal matrix")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = np.asarray(self.rotation)
        T[:3, 3] = np.asarray(self.translation)
        return T

    def apply(self, points):
        """Transform points of shape ``(..., 3)``."""
        return _apply_rigid(self.rotation, self.translation, points)

    def inverse(self) -> "RigidTransform":
        Rt = jnp.swapaxes(jnp.asarray(self.rotation), -1, -2)
        return RigidTransform(Rt, -Rt @ jnp.asarray(self.translation))

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        R = jnp.asarray(self.rotation) @ jnp.asarray(other.rotation)
        t = jnp.asarray(self.rotation) @ jnp.asarray(other.translation) + jnp.asarray(self.translation)
        return RigidTransform(R, t)

    def to_params(self) -> np.ndarray:
        """Inverse of :func:`se3_from_params`: ``[axis_angle, translation]``."""
        return np.concatenate([rotation_log(np.asarray(self.rotation)), np.asarray(self.translation)])

    def to_dict(self) -> dict:
        return {
            "rotation": np.asarray(self.rotation).tolist(),
            "translation": np.asarray(self.translation).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        return cls(np.asarray(d["rotation"], float), np.asarray(d["translation"], float))


# ---------------------------------------------------------------------------
# traceable kernels


def _skew(w):
    z = jnp.zeros_like(w[..., 0])
    return jnp.stack(
        [
            jnp.stack([z, -w[..., 2], w[..., 1]], -1),
            jnp.stack([w[..., 2], z, -w[..., 0]], -1),
            jnp.stack([-w[..., 1], w[..., 0], z], -1),
        ],
        -2,
    )


def rodrigues(w):
    """Rotation matrix ``exp([w]x)`` for axis-angle vectors ``(..., 3)``.

    Small angles switch to the Taylor series so that the map and its
    derivative stay finite at ``w = 0``.
    """
    w = jnp.asarray(w, dtype=float)
    theta2 = jnp.sum(w * w, axis=-1)
    small = theta2 < 1e-12
    safe2 = jnp.where(small, 1.0, theta2)
    theta = jnp.sqrt(safe2)
    a = jnp.where(small, 1.0 - theta2 / 6.0, jnp.sin(theta) / theta)
    b = jnp.where(small, 0.5 - theta2 / 24.0, (1.0 - jnp.cos(theta)) / safe2)
    Kw = _skew(w)
    eye = jnp.broadcast_to(jnp.eye(3), Kw.shape)
    return eye + a[..., None, None] * Kw + b[..., None, None] * (Kw @ Kw)


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (numpy, not traced)."""
    R = np.asarray(R, dtype=float)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return vee / 2.0
    if np.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; read the axis off R + I
        M = (R + np.eye(3)) / 2.0
        axis = M[np.argmax(np.diag(M))]
        axis = axis / np.linalg.norm(axis)
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * vee


def _apply_rigid(R, t, points):
    return jnp.einsum("ij,...j->...i", R, points) + t


def _backproject(u, v, z, intr):
    fx, fy, cx, cy = intr
    return jnp.stack([z * (u - cx) / fx, z * (v - cy) / fy, z], axis=-1)


def _project(points, intr):
    """Perspective projection; returns ``(uv, valid)`` with ``valid = z > 0``."""
    fx, fy, cx, cy = intr
    z = points[..., 2]
    valid = z > 0
    zs = jnp.where(valid, z, 1.0)
    uv = jnp.stack([fx * points[..., 0] / zs + cx, fy * points[..., 1] / zs + cy], axis=-1)
    return uv, valid


def _jacobian_gamma(u, v, z, intr):
    fx, fy, cx, cy = intr
    u, v, z = jnp.broadcast_arrays(jnp.asarray(u, float), jnp.asarray(v, float), jnp.asarray(z, float))
    zero = jnp.zeros_like(z)
    one = jnp.ones_like(z)
    return jnp.stack(
        [
            jnp.stack([z / fx, zero, (u - cx) / fx], -1),
            jnp.stack([zero, z / fy, (v - cy) / fy], -1),
            jnp.stack([zero, zero, one], -1),
        ],
        -2,
    )


def _propagate_covariance(u, v, mu_z, sigma_z, sigma_u, sigma_v, intr):
    G = _jacobian_gamma(u, v, mu_z, intr)
    d = jnp.stack(jnp.broadcast_arrays(jnp.asarray(sigma_u, float) ** 2,
                                       jnp.asarray(sigma_v, float) ** 2,
                                       jnp.asarray(sigma_z, float) ** 2), -1)
    # G diag(d) G^T without forming the diagonal matrix
    cov = jnp.einsum("...ik,...k,...jk->...ij", G, d, G)
    return 0.5 * (cov + jnp.swapaxes(cov, -1, -2))


# ---------------------------------------------------------------------------
# public, validated API


def _require_positive(x, name):
    if is_concrete(x) and np.any(np.asarray(x) <= 0):
        raise DomainError(f"{name} must be positive")


def _require_nonnegative(x, name):
    if is_concrete(x) and np.any(np.asarray(x) < 0):
        raise DomainError(f"{name} must be non-negative")


def backproject(u, v, z, k: CameraIntrinsics):
    """3D point ``z * K^-1 [u, v, 1]`` seen at pixel ``(u, v)`` with depth ``z``.

    Broadcasts over array inputs; the result has a trailing axis of size 3.
    """
    _require_positive(z, "depth")
    return _backproject(jnp.asarray(u, float), jnp.asarray(v, float), jnp.asarray(z, float), k.params)


def project(points, k: CameraIntrinsics):
    """Pixel coordinates of points ``(..., 3)`` and a ``z > 0`` validity mask."""
    return _project(jnp.asarray(points, float), k.params)


def jacobian_gamma(u, v, z, k: CameraIntrinsics):
    """Jacobian of ``(u, v, z) -> (x, y, z)`` evaluated at ``(u, v, z)``."""
    _require_positive(z, "depth")
    return _jacobian_gamma(u, v, z, k.params)


def propagate_covariance(u, v, mu_z, sigma_z, sigma_u=SIGMA_PIXEL, sigma_v=SIGMA_PIXEL, k: CameraIntrinsics = None):
    """3D covariance ``G diag(s_u^2, s_v^2, s_z^2) G^T`` of a back-projected pixel.

    ``G`` is :func:`jacobian_gamma` at the mean depth.  The result is
    symmetrized to absorb rounding.
    """
    if k is None:
        raise ContractViolation("camera intrinsics are required")
    _require_positive(mu_z, "mean depth")
    for value, name in ((sigma_z, "sigma_z"), (sigma_u, "sigma_u"), (sigma_v, "sigma_v")):
        _require_nonnegative(value, name)
    return _propagate_covariance(u, v, mu_z, sigma_z, sigma_u, sigma_v, k.params)


def se3_from_params(axis_angle, translation) -> RigidTransform:
    """Rigid transform from an axis-angle rotation (radians) and a translation (m)."""
    return RigidTransform(rodrigues(axis_angle), jnp.asarray(translation, dtype=float))


def transform_gaussian(t: RigidTransform, g: Gaussian3) -> Gaussian3:
    R = jnp.asarray(t.rotation)
    mean = R @ jnp.asarray(g.mean) + jnp.asarray(t.translation)
    cov = R @ jnp.asarray(g.cov) @ R.T
    return Gaussian3(mean, cov)
