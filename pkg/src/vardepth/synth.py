"""Synthetic scenes with exact depth and poses.

Every frame is rendered by casting the ray of each pixel center into an
analytic surface and evaluating a band-limited procedural texture at the
hit point, so depth and appearance are exact up to floating point.

Scene description (a plain dict, usually loaded from JSON)::

    {
      "generator": "fronto_plane" | "slanted_plane" | "step" | "heightfield",
      "width": 64, "height": 48, "focal": 56.0, "n_frames": 3,
      "depth": 5.0,                      # plane offset / base depth (m)
      "normal": [0.25, 0.0, 1.0],        # slanted_plane only
      "step": {"edge_x": 0.0, "far_depth": 7.0},          # step only
      "heights": {"amplitude": 0.4, "wavelength": 2.0},   # heightfield only
      "motion": {"translation": [0.3, 0, 0], "rotation": [0, 0, 0]},
      "texture": {"contrast": 0.25, "wavelength_px": [6, 20], "n_waves": 24,
                  "contrast_ramp": [0.3, 0.02]}   # optional, left to right
    }

``motion`` is the per-frame camera displacement expressed in the current
camera frame; consecutive camera poses are ``C_t = C_{t-1} M``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import jax.numpy as jnp
import numpy as np

from .errors import ContractViolation
from .geometry import CameraIntrinsics, RigidTransform, rotation_log, se3_from_params

GENERATORS = ("fronto_plane", "slanted_plane", "step", "heightfield")

DEFAULT_SPEC = {
    "generator": "slanted_plane",
    "width": 64,
    "height": 48,
    "focal": 56.0,
    "n_frames": 3,
    "depth": 5.0,
    "normal": [0.25, 0.0, 1.0],
    "step": {"edge_x": 0.0, "far_depth": 7.0},
    "heights": {"amplitude": 0.4, "wavelength": 2.5},
    "motion": {"translation": [0.3, 0.0, 0.0], "rotation": [0.0, 0.0, 0.0]},
    "texture": {"contrast": 0.25, "wavelength_px": [6.0, 20.0], "n_waves": 24},
}


@dataclass(eq=False)
class Scene:
    """Rendered frames with exact per-frame depth.

    ``gt_poses[t - 1]`` maps points from camera ``t`` into camera ``t - 1``.
    """

    frames: list
    gt_depth: list
    gt_poses: list
    intrinsics: CameraIntrinsics
    seed: int | None = None
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.frames)
        if n < 1 or len(self.gt_depth) != n or len(self.gt_poses) != n - 1:
            raise ContractViolation("a scene needs F frames, F depth maps and F-1 poses")
        shape = np.shape(self.gt_depth[0])
        for img, dep in zip(self.frames, self.gt_depth):
            if np.shape(img)[:2] != shape or np.shape(dep) != shape:
                raise ContractViolation("frames and depth maps must share one raster size")
            if np.any(np.asarray(dep) <= 0):
                raise ContractViolation("ground-truth depth must be positive")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(np.shape(self.gt_depth[0]))


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in update.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve_spec(spec: dict | None) -> dict:
    """Fill missing keys of a scene description with defaults and validate it."""
    spec = _merge(DEFAULT_SPEC, spec or {})
    if spec["generator"] not in GENERATORS:
        raise ContractViolation(f"unknown generator {spec['generator']!r}; choose from {GENERATORS}")
    if spec["width"] < 2 or spec["height"] < 2 or spec["n_frames"] < 1:
        raise ContractViolation("raster must be at least 2x2 with one frame")
    if spec["depth"] <= 0 or spec["focal"] <= 0:
        raise ContractViolation("depth and focal length must be positive")
    lo, hi = spec["texture"]["wavelength_px"]
    if not 0 < lo <= hi:
        raise ContractViolation("texture wavelength band must satisfy 0 < low <= high")
    return spec


class _Texture:
    """Sum of random plane waves with wavelengths in a band (meters)."""

    def __init__(self, rng, contrast, lam_lo, lam_hi, n_waves, ramp=None):
        theta = rng.uniform(0, 2 * np.pi, n_waves)
        lam = np.exp(rng.uniform(np.log(lam_lo), np.log(lam_hi), n_waves))
        self.freq = (2 * np.pi / lam)[:, None] * np.stack([np.cos(theta), np.sin(theta)], 1)
        self.phase = rng.uniform(0, 2 * np.pi, (n_waves, 3))
        weights = rng.normal(size=(n_waves, 3))
        # unit variance per channel before scaling by contrast
        self.weights = weights / np.sqrt(0.5 * np.sum(weights**2, axis=0, keepdims=True))
        self.base = rng.uniform(0.4, 0.6, 3)
        self.contrast = contrast
        self.ramp = ramp

    def gain(self, s):
        """Contrast at texture coordinate ``s``; ``ramp = (s0, s1, c0, c1)``
        interpolates linearly from ``c0`` at ``s0`` to ``c1`` at ``s1``."""
        if self.ramp is None:
            return np.full(np.shape(s), self.contrast)
        s0, s1, c0, c1 = self.ramp
        w = np.clip((s - s0) / (s1 - s0), 0.0, 1.0)
        return c0 + (c1 - c0) * w

    def __call__(self, s, t):
        arg = s[..., None] * self.freq[:, 0] + t[..., None] * self.freq[:, 1]
        waves = np.cos(arg[..., None] + self.phase)
        val = self.base + self.gain(s)[..., None] * np.einsum("...kc,kc->...c", waves, self.weights)
        return np.clip(val, 0.0, 1.0)


def _rays(k: CameraIntrinsics, h: int, w: int):
    v, u = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    return np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], -1)


def plane_depth(k: CameraIntrinsics, h: int, w: int, normal, offset: float) -> np.ndarray:
    """Depth of the plane ``n . X = offset`` seen from the reference camera."""
    return offset / (_rays(k, h, w) @ np.asarray(normal, float))


def _hit(spec, origin, dirs, texture):
    """Camera-depth of the first surface hit and the texture sample there.

    ``dirs`` are world-frame ray directions whose camera-z component is 1,
    so the ray parameter equals camera depth.
    """
    gen = spec["generator"]
    d0 = spec["depth"]
    ox, oy, oz = origin
    if gen in ("fronto_plane", "slanted_plane"):
        n = np.array([0.0, 0.0, 1.0]) if gen == "fronto_plane" else np.asarray(spec["normal"], float)
        n = n / np.linalg.norm(n)
        offset = d0 * n[2]
        s = (offset - n @ origin) / (dirs @ n)
        X = origin + s[..., None] * dirs
        return s, texture(X[..., 0], X[..., 1])

    if gen == "step":
        edge = spec["step"]["edge_x"]
        far = spec["step"]["far_depth"]
        big = np.inf
        s_near = (d0 - oz) / dirs[..., 2]
        x_near = ox + s_near * dirs[..., 0]
        s_near = np.where((s_near > 0) & (x_near < edge), s_near, big)
        s_far = (far - oz) / dirs[..., 2]
        x_far = ox + s_far * dirs[..., 0]
        s_far = np.where((s_far > 0) & (x_far >= edge), s_far, big)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_wall = (edge - ox) / dirs[..., 0]
        z_wall = oz + s_wall * dirs[..., 2]
        lo, hi = min(d0, far), max(d0, far)
        s_wall = np.where((s_wall > 0) & (z_wall >= lo) & (z_wall <= hi), s_wall, big)
        s = np.minimum(np.minimum(s_near, s_far), s_wall)
        if not np.all(np.isfinite(s)):
            raise ContractViolation("some rays miss the step surface; reduce motion or field of view")
        X = origin + s[..., None] * dirs
        on_wall = s == s_wall
        tex_s = np.where(on_wall, X[..., 2], X[..., 0])
        return s, texture(tex_s, X[..., 1])

    # heightfield z = d0 + A sin(x / L) cos(y / L) style bumps, solved by fixed point
    amp = spec["heights"]["amplitude"]
    lam = spec["heights"]["wavelength"]

    def height(x, y):
        return d0 + amp * np.sin(2 * np.pi * x / lam) * np.cos(2 * np.pi * y / (1.3 * lam))

    s = (d0 - oz) / dirs[..., 2]
    for _ in range(200):
        X = origin + s[..., None] * dirs
        s_new = (height(X[..., 0], X[..., 1]) - oz) / dirs[..., 2]
        if np.max(np.abs(s_new - s)) < 1e-13:
            s = s_new
            break
        s = s_new
    else:
        raise ContractViolation("heightfield ray casting did not converge; lower the amplitude")
    X = origin + s[..., None] * dirs
    return s, texture(X[..., 0], X[..., 1])


def synth_scene(spec: dict | None = None, seed: int = 0) -> Scene:
    """Render a scene from a description; deterministic for a given seed."""
    spec = resolve_spec(spec)
    rng = np.random.default_rng(seed)
    w, h = int(spec["width"]), int(spec["height"])
    k = CameraIntrinsics.centered(w, h, float(spec["focal"]))

    lam_lo, lam_hi = spec["texture"]["wavelength_px"]
    meters_per_px = spec["depth"] / k.fx
    ramp = spec["texture"].get("contrast_ramp")
    if ramp is not None:
        # contrast varies along world x across the reference view
        half = spec["depth"] * (w - 1) / (2 * k.fx)
        ramp = (-half, half, float(ramp[0]), float(ramp[1]))
    texture = _Texture(
        rng,
        float(spec["texture"]["contrast"]),
        lam_lo * meters_per_px,
        lam_hi * meters_per_px,
        int(spec["texture"]["n_waves"]),
        ramp,
    )

    step = se3_from_params(spec["motion"]["rotation"], spec["motion"]["translation"])
    step = RigidTransform(np.asarray(step.rotation), np.asarray(step.translation))
    cam = RigidTransform.identity()
    rays = _rays(k, h, w)
    frames, depths, poses = [], [], []
    for t in range(int(spec["n_frames"])):
        if t > 0:
            cam = cam @ step
            poses.append(step)
        R = np.asarray(cam.rotation)
        dirs = rays @ R.T
        s, img = _hit(spec, np.asarray(cam.translation), dirs, texture)
        if np.any(s <= 0):
            raise ContractViolation("surface behind a camera; check depth and motion")
        frames.append(img)
        depths.append(s)
    return Scene(frames, depths, poses, k, seed, spec)


def pose_params(scene: Scene) -> np.ndarray:
    """Ground-truth poses as ``(F-1, 6)`` ``[axis_angle, translation]`` rows."""
    return np.array([np.concatenate([rotation_log(np.asarray(p.rotation)), np.asarray(p.translation)])
                     for p in scene.gt_poses]).reshape(-1, 6)


def covisible_mask(scene: Scene, t: int) -> np.ndarray:
    """Pixels of frame ``t`` whose true surface point lands inside a
    neighbouring frame (in front of its camera)."""
    from .geometry import _apply_rigid, _backproject, _project
    from .photometric import in_bounds

    h, w = scene.shape
    k = scene.intrinsics.params
    v, u = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    pts = np.asarray(_backproject(u, v, scene.gt_depth[t], k))
    seen = np.zeros((h, w), bool)
    transforms = []
    if t > 0:
        transforms.append(scene.gt_poses[t - 1])
    if t < scene.n_frames - 1:
        transforms.append(scene.gt_poses[t].inverse())
    for T in transforms:
        uv, valid = _project(_apply_rigid(jnp.asarray(T.rotation), jnp.asarray(T.translation), pts), k)
        uv, valid = np.asarray(uv), np.asarray(valid)
        seen |= valid & np.asarray(in_bounds(uv, h, w))
    return seen


def flip_scene(scene: Scene) -> Scene:
    """The left-right mirror image of a scene.

    Mirroring ``x -> -x`` conjugates every rigid motion by ``S = diag(-1, 1, 1)``
    and moves the principal point to ``width - 1 - cx``.
    """
    from dataclasses import replace as _replace

    s = np.diag([-1.0, 1.0, 1.0])
    k = scene.intrinsics
    w = scene.shape[1]
    poses = [RigidTransform(s @ np.asarray(p.rotation) @ s, s @ np.asarray(p.translation)) for p in scene.gt_poses]
    return Scene([np.asarray(f)[:, ::-1] for f in scene.frames], [np.asarray(d)[:, ::-1] for d in scene.gt_depth],
                 poses, _replace(k, cx=(w - 1) - k.cx), scene.seed, scene.spec)
