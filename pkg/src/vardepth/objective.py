"""Total loss, its gradients, and the two-stage optimization schedule.

Free parameters live in a dict pytree::

    {"mean": (F, H, W), "log_std": (F, H, W), "pose": (F - 1, 6)}

``pose[k] = [axis_angle, translation]`` maps points from camera ``k + 1``
into camera ``k``.  The standard deviation is read back as
``max(exp(log_std), sigma_min)``.

For each optimization step the loss is::

    L = L_img + w * L_mw + s * L_sm + d * L_std

* ``L_img``: per target frame, the photometric energy of the previous and
  next frames warped with the sampled depth ``mean + eps * std``, combined by
  per-pixel minimum and auto-masking, averaged over valid pixels, summed
  over frames.  The next frame is reached with the inverse of its pose.
* ``L_mw``: per frame pair, the entropic transport value between the sampled
  points of one frame (moved by the pose) and the Gaussian cloud of the
  other, on a sparse grid; forward and reverse directions are averaged and
  pairs are summed.  In stage 1 the target clouds use ``std = 1``.
* ``L_sm`` and ``L_std``: summed over frames.

Gradients come from reverse-mode differentiation of the whole pipeline,
including the fixed number of Sinkhorn iterations.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

from .depthdist import SIGMA_MIN, DepthDistribution, _lift, std_from_log
from .errors import ContractViolation, NonFiniteGradient, OptimizationDiverged
from .geometry import SIGMA_PIXEL, CameraIntrinsics, RigidTransform, _apply_rigid, _backproject, rodrigues
from .photometric import BETA, _min_reprojection_automask, _photometric_energy, _smooth_loss, _warp, masked_mean
from .transport import EPSILON, N_ITER, GridSpec, _build_cost, _sinkhorn_value, grid_pixels

GROUPS = ("mean", "log_std", "pose")
COMPONENTS = ("total", "img", "mw", "smooth", "std")
HISTORY_COLUMNS = ("step",) + COMPONENTS
STAGE_FROZEN = {1: frozenset({"log_std"}), 2: frozenset({"mean", "pose"})}


@dataclass(frozen=True)
class LossWeights:
    w: float = 0.3
    s: float = 0.001
    d: float = 0.3

    def __post_init__(self):
        if min(self.w, self.s, self.d) < 0:
            raise ContractViolation("loss weights must be non-negative")


@dataclass(frozen=True)
class Config:
    """Optimization settings; round-trips through JSON."""

    weights: LossWeights = field(default_factory=LossWeights)
    eps: float = EPSILON
    n_it: int = N_ITER
    log_domain: bool = True
    grid: tuple = (8, 4)
    random_offsets: bool = True
    sigma_uv: float = SIGMA_PIXEL
    sigma_min: float = SIGMA_MIN
    beta: float = BETA
    likelihood: str = "gibbs"
    stage1_steps: int = 2000
    stage2_steps: int = 1000
    lr: float = 1e-4
    lr_pose: float | None = None
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8
    init_depth: float = 4.0
    init_std: float = 0.1
    init_pose: str = "gt"
    seed: int = 0

    def __post_init__(self):
        if self.eps <= 0 or self.n_it < 1:
            raise ContractViolation("eps must be positive and n_it >= 1")
        if self.likelihood not in ("gibbs", "squared"):
            raise ContractViolation("likelihood must be 'gibbs' or 'squared'")
        if self.init_pose not in ("gt", "identity"):
            raise ContractViolation("init_pose must be 'gt' or 'identity'")
        if self.init_depth <= 0 or self.init_std <= 0 or self.lr <= 0 or (self.lr_pose or 0) < 0:
            raise ContractViolation("init_depth, init_std and lr must be positive")
        if self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ContractViolation("stage lengths must be non-negative")
        GridSpec(*self.grid)

    @property
    def grid_spec(self) -> GridSpec:
        return GridSpec(*self.grid)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractViolation(f"unknown config keys: {sorted(unknown)}")
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "grid" in d:
            d["grid"] = tuple(int(x) for x in d["grid"])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "Config":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


class _Static(NamedTuple):
    w: float
    s: float
    d: float
    eps: float
    n_it: int
    log_domain: bool
    sigma_uv: float
    sigma_min: float
    beta: float
    likelihood: str
    intr: tuple
    stage: int


def _static(config: Config, k: CameraIntrinsics, stage: int, weights: LossWeights | None = None) -> _Static:
    wt = weights or config.weights
    return _Static(wt.w, wt.s, wt.d, config.eps, config.n_it, config.log_domain, config.sigma_uv,
                   config.sigma_min, config.beta, config.likelihood, tuple(k.params), stage)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    img: float
    mw: float
    smooth: float
    std: float

    def as_row(self, step: int) -> dict:
        return {"step": step, **asdict(self)}


@dataclass(frozen=True, eq=False)
class StepNoise:
    """Reparameterization noise ``(F, H, W)`` and the grid used for one step."""

    eps: np.ndarray
    grid: GridSpec

    @classmethod
    def draw(cls, rng: np.random.Generator, shape, grid: GridSpec, random_offsets: bool = True):
        eps = rng.standard_normal(shape)
        if random_offsets:
            grid = grid.random_offsets(rng)
        return cls(eps, grid)

    @classmethod
    def zeros(cls, shape, grid: GridSpec):
        return cls(np.zeros(shape), grid)


@dataclass(eq=False)
class OptimState:
    """Parameters, Adam moments and schedule position."""

    params: dict
    stage: int = 1
    step: int = 0
    m: dict | None = None
    v: dict | None = None
    count: int = 0
    frozen: frozenset | None = None

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ContractViolation("stage must be 1 or 2")
        if set(self.params) != set(GROUPS):
            raise ContractViolation(f"parameters must have groups {GROUPS}")
        f, h, w = np.shape(self.params["mean"])
        if np.shape(self.params["log_std"]) != (f, h, w) or np.shape(self.params["pose"]) != (f - 1, 6):
            raise ContractViolation("parameter shapes are inconsistent")
        if self.m is None:
            self.m = jax.tree_util.tree_map(jnp.zeros_like, self.params)
            self.v = jax.tree_util.tree_map(jnp.zeros_like, self.params)

    @property
    def frozen_groups(self) -> frozenset:
        return STAGE_FROZEN[self.stage] if self.frozen is None else frozenset(self.frozen)

    @property
    def shape(self) -> tuple:
        return tuple(np.shape(self.params["mean"]))

    @classmethod
    def initial(cls, n_frames: int, height: int, width: int, depth: float, std: float, pose=None):
        if pose is None:
            pose = np.zeros((n_frames - 1, 6))
        params = {
            "mean": jnp.full((n_frames, height, width), float(depth), dtype=jnp.float64),
            "log_std": jnp.full((n_frames, height, width), float(np.log(std)), dtype=jnp.float64),
            "pose": jnp.asarray(pose, float).reshape(n_frames - 1, 6),
        }
        return cls(params)

    def distributions(self, sigma_min: float = SIGMA_MIN) -> list:
        mean = np.asarray(self.params["mean"])
        std = np.asarray(std_from_log(self.params["log_std"], sigma_min))
        return [DepthDistribution(mean[i], std[i]) for i in range(len(mean))]

    def transforms(self) -> list:
        pose = np.asarray(self.params["pose"])
        return [RigidTransform(np.asarray(rodrigues(p[:3])), p[3:].copy()) for p in pose]


# ---------------------------------------------------------------------------
# traced loss


def _image_energy(target, synth, st: _Static):
    if st.likelihood == "squared":
        return jnp.mean((target - synth) ** 2, axis=-1)
    return _photometric_energy(target, synth, st.beta)


def _frame_image_loss(t, frames, depth, Rs, ts, st: _Static):
    """Min-reprojection, auto-masked loss of target frame ``t``."""
    n = frames.shape[0]
    target = frames[t]
    srcs = []
    if t > 0:
        srcs.append((frames[t - 1], Rs[t - 1], ts[t - 1]))
    if t < n - 1:
        R = Rs[t].T
        srcs.append((frames[t + 1], R, -R @ ts[t]))
    losses, ids, valids = [], [], []
    for img, R, tr in srcs:
        warped, valid = _warp(img, depth, R, tr, st.intr)
        losses.append(_image_energy(target, warped, st))
        ids.append(_image_energy(target, img, st))
        valids.append(valid)
    if len(srcs) == 1:
        losses, ids, valids = losses * 2, ids * 2, valids * 2
    masked, mask = _min_reprojection_automask(losses[0], losses[1], ids[0], ids[1], valids[0], valids[1])
    return masked_mean(masked, mask)


def _transport(sampled_depth, pixels, R, tr, mean, std, st: _Static):
    u = pixels[:, 0]
    v = pixels[:, 1]
    pts = _backproject(u.astype(float), v.astype(float), sampled_depth[v, u], st.intr)
    pts = _apply_rigid(R, tr, pts)
    means, covs = _lift(mean, std, pixels, st.intr, st.sigma_uv, st.sigma_uv)
    return _sinkhorn_value(_build_cost(pts, means, covs), st.eps, st.n_it, st.log_domain)


def _components(params, frames, noise, pixels, st: _Static):
    mean = params["mean"]
    std = std_from_log(params["log_std"], st.sigma_min)
    pose = params["pose"]
    n = mean.shape[0]
    sampled = mean + noise * std
    Rs = rodrigues(pose[:, :3]) if n > 1 else jnp.zeros((0, 3, 3))
    ts = pose[:, 3:]

    img = sum(_frame_image_loss(t, frames, sampled[t], Rs, ts, st) for t in range(n))

    mw_std = jnp.ones_like(std) if st.stage == 1 else std
    mw = 0.0
    for k in range(n - 1):
        R, tr = Rs[k], ts[k]
        fwd = _transport(sampled[k + 1], pixels, R, tr, mean[k], mw_std[k], st)
        rev = _transport(sampled[k], pixels, R.T, -R.T @ tr, mean[k + 1], mw_std[k + 1], st)
        mw = mw + 0.5 * (fwd + rev)

    smooth = sum(_smooth_loss(mean[t], frames[t]) for t in range(n))
    stdl = jnp.sum(jnp.mean(std, axis=(1, 2)))
    total = img + st.w * mw + st.s * smooth + st.d * stdl
    return {"total": total, "img": img, "mw": mw, "smooth": smooth, "std": stdl}


@partial(jax.jit, static_argnames=("st",))
def _eval_components(params, frames, noise, pixels, st):
    return _components(params, frames, noise, pixels, st)


@partial(jax.jit, static_argnames=("st",))
def _value_and_grad(params, frames, noise, pixels, st):
    def f(p):
        c = _components(p, frames, noise, pixels, st)
        return c["total"], c

    (_, comps), grads = jax.value_and_grad(f, has_aux=True)(params)
    return comps, grads


@partial(jax.jit, static_argnames=("st", "name"))
def _component_grad(params, frames, noise, pixels, st, name):
    return jax.grad(lambda p: _components(p, frames, noise, pixels, st)[name])(params)


# ---------------------------------------------------------------------------
# public API


def _prepare(state: OptimState, frames, noise: StepNoise):
    frames = jnp.clip(jnp.asarray(np.asarray(frames, float)), 0.0, 1.0)
    if frames.ndim == 3:
        frames = frames[..., None]
    f, h, w = state.shape
    if frames.shape[:3] != (f, h, w):
        raise ContractViolation(f"frames {frames.shape[:3]} do not match parameters {(f, h, w)}")
    if np.shape(noise.eps) != (f, h, w):
        raise ContractViolation("noise raster does not match parameters")
    pixels = jnp.asarray(grid_pixels(w, h, noise.grid))
    return frames, jnp.asarray(noise.eps, float), pixels


def _breakdown(comps) -> LossBreakdown:
    return LossBreakdown(**{k: float(comps[k]) for k in COMPONENTS})


def total_loss(state: OptimState, frames, noise: StepNoise, k: CameraIntrinsics,
               config: Config = Config(), weights: LossWeights | None = None) -> LossBreakdown:
    """Loss components at ``state`` for fixed noise; the stage comes from ``state``."""
    frames, eps, pixels = _prepare(state, frames, noise)
    return _breakdown(_eval_components(state.params, frames, eps, pixels, _static(config, k, state.stage, weights)))


@dataclass(frozen=True, eq=False)
class GradientRecord:
    grads: dict
    loss: LossBreakdown
    frozen: frozenset


def gradients(state: OptimState, frames, noise: StepNoise, k: CameraIntrinsics,
              config: Config = Config(), weights: LossWeights | None = None) -> GradientRecord:
    """Gradient of the total loss; frozen groups are returned as exact zeros.

    Raises :class:`NonFiniteGradient` naming the offending loss component.
    """
    frames, eps, pixels = _prepare(state, frames, noise)
    st = _static(config, k, state.stage, weights)
    comps, grads = _value_and_grad(state.params, frames, eps, pixels, st)
    frozen = state.frozen_groups
    grads = {g: jnp.zeros_like(v) if g in frozen else v for g, v in grads.items()}
    _check_finite(grads, state.params, frames, eps, pixels, st)
    return GradientRecord(grads, _breakdown(comps), frozen)


def _check_finite(grads, params, frames, eps, pixels, st):
    if all(bool(jnp.all(jnp.isfinite(g))) for g in grads.values()):
        return
    for name in COMPONENTS[1:]:
        g = _component_grad(params, frames, eps, pixels, st, name)
        bad = [grp for grp in GROUPS if not bool(jnp.all(jnp.isfinite(g[grp])))]
        if bad:
            raise NonFiniteGradient(name, f"non-finite gradient of the {name} loss w.r.t. {', '.join(bad)}")
    raise NonFiniteGradient("total", "non-finite gradient of the total loss")


@partial(jax.jit, static_argnames=("st", "trainable", "b1", "b2", "adam_eps"))
def _adam_step(params, m, v, count, lrs, frames, noise, pixels, st, trainable, b1, b2, adam_eps):
    def f(p):
        c = _components(p, frames, noise, pixels, st)
        return c["total"], c

    (_, comps), grads = jax.value_and_grad(f, has_aux=True)(params)
    finite = jnp.all(jnp.array([jnp.all(jnp.isfinite(grads[g])) for g in trainable]))
    new_p, new_m, new_v = dict(params), dict(m), dict(v)
    for g in trainable:
        new_m[g] = b1 * m[g] + (1 - b1) * grads[g]
        new_v[g] = b2 * v[g] + (1 - b2) * grads[g] ** 2
        mhat = new_m[g] / (1 - b1**count)
        vhat = new_v[g] / (1 - b2**count)
        new_p[g] = params[g] - lrs[g] * mhat / (jnp.sqrt(vhat) + adam_eps)
    return new_p, new_m, new_v, comps, finite


def adam_step(state: OptimState, frames, noise: StepNoise, k: CameraIntrinsics, config: Config) -> LossBreakdown:
    """One Adam update of the unfrozen groups in place; returns the pre-update loss."""
    frames, eps, pixels = _prepare(state, frames, noise)
    st = _static(config, k, state.stage)
    trainable = tuple(g for g in GROUPS if g not in state.frozen_groups)
    count = state.count + 1
    lr_pose = config.lr if config.lr_pose is None else config.lr_pose
    lrs = {"mean": config.lr, "log_std": config.lr, "pose": lr_pose}
    lrs = {g: lrs[g] for g in trainable}
    p, m, v, comps, finite = _adam_step(state.params, state.m, state.v, float(count), lrs, frames, eps, pixels,
                                        st, trainable, config.adam_b1, config.adam_b2, config.adam_eps)
    loss = _breakdown(comps)
    if not bool(finite) or not np.isfinite(loss.total):
        _check_finite(_component_grad(state.params, frames, eps, pixels, st, "total"),
                      state.params, frames, eps, pixels, st)
        raise FloatingPointError("loss is not finite")
    state.params, state.m, state.v, state.count = p, m, v, count
    state.step += 1
    return loss


@dataclass(eq=False)
class OptimResult:
    distributions: list
    poses: list
    history: list
    state: OptimState
    seconds: float = 0.0

    def write_history(self, path) -> None:
        write_history(self.history, path)


def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in history:
            writer.writerow({key: (row[key] if key == "step" else repr(float(row[key]))) for key in HISTORY_COLUMNS})


def initial_state(scene, config: Config) -> OptimState:
    f, (h, w) = scene.n_frames, scene.shape
    pose = None
    if config.init_pose == "gt":
        from .synth import pose_params

        pose = pose_params(scene)
    return OptimState.initial(f, h, w, config.init_depth, config.init_std, pose)


def run_stage(state: OptimState, scene, config: Config, stage: int, n_steps: int,
              rng: np.random.Generator, history: list | None = None, callback=None) -> list:
    """Run ``n_steps`` Adam updates of one stage in place, with fresh moments."""
    history = [] if history is None else history
    frames = np.stack(scene.frames)
    state.stage = stage
    state.count = 0
    state.m = jax.tree_util.tree_map(jnp.zeros_like, state.params)
    state.v = jax.tree_util.tree_map(jnp.zeros_like, state.params)
    for _ in range(n_steps):
        noise = StepNoise.draw(rng, state.shape, config.grid_spec, config.random_offsets)
        try:
            loss = adam_step(state, frames, noise, scene.intrinsics, config)
        except FloatingPointError as exc:
            raise OptimizationDiverged(f"stage {stage}, step {state.step}: {exc}", history) from exc
        history.append({**loss.as_row(state.step - 1), "stage": stage})
        if callback is not None:
            callback(state, loss)
    return history


def optimize_two_stage(scene, config: Config = Config(), seed: int | None = None,
                       state: OptimState | None = None, callback=None) -> OptimResult:
    """Stage 1 fits means and poses (std frozen, ``std = 1`` inside the
    transport loss); stage 2 fits only the log-std rasters.

    Deterministic for a given seed.  A non-finite loss raises
    :class:`OptimizationDiverged` carrying the history so far.
    """
    if scene.n_frames < 2:
        raise ContractViolation("optimization needs at least two frames")
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    state = initial_state(scene, config) if state is None else state
    history = []
    start = time.perf_counter()
    run_stage(state, scene, config, 1, config.stage1_steps, rng, history, callback)
    run_stage(state, scene, config, 2, config.stage2_steps, rng, history, callback)
    return OptimResult(state.distributions(config.sigma_min), state.transforms(), history, state,
                       time.perf_counter() - start)


# ---------------------------------------------------------------------------
# finite-difference check


def gradient_pairs(state: OptimState, frames, noise: StepNoise, k: CameraIntrinsics,
                   config: Config = Config(), rel_step: float = 1e-6):
    """Reverse-mode and central-difference Jacobians of the components,
    each ``(len(COMPONENTS), n_params)``, plus the flat parameter vector.

    The step for coordinate ``x`` is ``rel_step * max(|x|, 1)``.
    """
    frames, eps, pixels = _prepare(state, frames, noise)
    st = _static(config, k, state.stage)
    flat, unravel = ravel_pytree(state.params)
    steps = rel_step * jnp.maximum(jnp.abs(flat), 1.0)

    def comp_vec(x):
        c = _components(unravel(x), frames, eps, pixels, st)
        return jnp.stack([c[name] for name in COMPONENTS])

    analytic = jax.jit(jax.jacrev(comp_vec))(flat)
    eye = jnp.eye(flat.size) * steps[:, None]
    batched = jax.jit(jax.vmap(comp_vec))
    fd = (batched(flat + eye) - batched(flat - eye)).T / (2 * steps)
    return np.asarray(analytic), np.asarray(fd), np.asarray(flat)


def gradient_check(state: OptimState, frames, noise: StepNoise, k: CameraIntrinsics,
                   config: Config = Config(), rel_step: float = 1e-6) -> dict:
    """Max relative error between reverse-mode and central-difference
    gradients, per loss component, over every parameter.

    The relative error of a coordinate is ``|a - b| / max(|a|, |b|, floor)``
    with ``floor = 1e-6 * max|b|`` over that component, so coordinates whose
    derivative is zero up to rounding do not dominate.
    """
    analytic, fd, _ = gradient_pairs(state, frames, noise, k, config, rel_step)
    out = {}
    for i, name in enumerate(COMPONENTS):
        a, b = analytic[i], fd[i]
        floor = max(1e-6 * np.abs(b).max(), 1e-300)
        out[name] = float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
    return out


def with_stage(state: OptimState, stage: int) -> OptimState:
    return replace(state, stage=stage, m=state.m, v=state.v)
