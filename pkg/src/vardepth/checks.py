"""Self-checks shared by the CLI and the acceptance tests.

Each returns a small report object with a ``passed`` flag so callers can
print one line per check.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import jax.numpy as jnp
import numpy as np

from .depthdist import DepthDistribution, entropy_term, lift_cloud
from .elbo import LinearGaussianToy, elbo_check
from .geometry import CameraIntrinsics, jacobian_gamma, propagate_covariance, rodrigues, se3_from_params
from .objective import (
    COMPONENTS,
    Config,
    StepNoise,
    gradient_check,
    initial_state,
    optimize_two_stage,
    run_stage,
    with_stage,
)
from .refine import RefineConfig, refine_depth
from .synth import synth_scene
from .transport import GridSpec, exact_ot, grid_pixels, sinkhorn

GRADCHECK_SPEC = {"width": 16, "height": 12, "focal": 14.0, "n_frames": 2}


@dataclass
class SinkhornReport:
    cases: int
    max_abs_error: float
    max_residual: float
    unconverged: int
    seconds: float
    tol: float
    value_tol: float

    @property
    def passed(self) -> bool:
        return self.unconverged == 0 and self.max_residual < self.tol and self.max_abs_error <= self.value_tol


def sinkhorn_vs_exact(n_cases: int = 200, eps: float = 1e-3, tol: float = 1e-9, max_iter: int = 20000,
                      sizes=range(2, 9), high: float = 10.0, value_tol: float = 1e-3,
                      seed: int = 0, eps_start: float | None = None) -> SinkhornReport:
    """Log-domain Sinkhorn against the exact assignment on random costs in
    ``[0, high]``.  Iteration stops at ``tol`` or after ``max_iter`` sweeps.
    The temperature is annealed from ``eps_start`` (default ``high``) down to
    ``eps``; pass ``eps_start=eps`` for the plain iteration."""
    eps_start = high if eps_start is None else eps_start
    rng = np.random.default_rng(seed)
    sizes = list(sizes)
    errs, res = [], []
    start = time.perf_counter()
    for _ in range(n_cases):
        n = int(rng.choice(sizes))
        c = rng.uniform(0.0, high, (n, n))
        plan = sinkhorn(c, eps, max_iter, log_domain=True, tol=tol, eps_start=eps_start)
        errs.append(abs(plan.value - exact_ot(c)))
        res.append(plan.residual)
    res = np.array(res)
    return SinkhornReport(n_cases, float(max(errs)), float(res.max()), int(np.sum(res >= tol)),
                          time.perf_counter() - start, tol, value_tol)


@dataclass
class GradReport:
    errors: dict = field(default_factory=dict)  # "stage<k>/<component>" -> max relative error
    seconds: float = 0.0
    tol: float = 1e-3

    @property
    def worst(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol


def gradcheck_state(seed: int = 0, config: Config | None = None):
    """A 16x12 two-frame scene and a generic state on it.

    Means, log-stds and the pose are perturbed away from the flat,
    axis-aligned initial values, whose warps put whole pixel rows exactly
    on the image border where the masked loss jumps.
    """
    config = config or Config(grid=(4, 3))
    scene = synth_scene(GRADCHECK_SPEC, seed)
    state = initial_state(scene, config)
    rng = np.random.default_rng(seed)
    p = dict(state.params)
    p["mean"] = p["mean"] + 0.3 * rng.standard_normal(p["mean"].shape)
    p["log_std"] = p["log_std"] + 0.2 * rng.standard_normal(p["log_std"].shape)
    p["pose"] = p["pose"] + 0.01 * rng.standard_normal(p["pose"].shape)
    state = replace(state, params=p)
    noise = StepNoise.draw(rng, state.shape, config.grid_spec, config.random_offsets)
    return scene, state, noise, config


def gradient_suite(seed: int = 0, tol: float = 1e-3, rel_step: float = 1e-6) -> GradReport:
    """Reverse-mode vs central differences for every component, both stages."""
    start = time.perf_counter()
    scene, state, noise, config = gradcheck_state(seed)
    report = GradReport(tol=tol)
    for stage in (1, 2):
        errs = gradient_check(with_stage(state, stage), scene.frames, noise, scene.intrinsics, config, rel_step)
        for name in COMPONENTS:
            report.errors[f"stage{stage}/{name}"] = errs[name]
    report.seconds = time.perf_counter() - start
    return report


@dataclass
class ElboReport:
    toys: int
    max_bound_excess: float  # max (ELBO - log p(x)) / SE over random q
    max_posterior_gap: float  # max |gap| / SE with q = exact posterior
    n_se: float

    @property
    def passed(self) -> bool:
        return self.max_bound_excess <= self.n_se and self.max_posterior_gap <= self.n_se


def elbo_suite(n_toys: int = 100, n_samples: int = 4096, n_se: float = 3.0, seed: int = 0) -> ElboReport:
    """Bound and tightness on random linear-Gaussian toys; ``q`` is a random
    Gaussian for the bound and the exact posterior for the tightness."""
    rng = np.random.default_rng(seed)
    excess, gaps = [], []
    for i in range(n_toys):
        toy = LinearGaussianToy.random(rng)
        m, s = toy.posterior()
        qm = m + rng.normal(0.0, 2.0 * s)
        qs = s * float(np.exp(rng.uniform(-1.0, 1.0)))
        r = elbo_check(toy, qm, qs, n_samples, seed=seed + 2 * i)
        excess.append((r.elbo - r.log_evidence) / r.stderr)
        r = elbo_check(toy, n_samples=n_samples, seed=seed + 2 * i + 1)
        gaps.append(abs(r.gap) / r.stderr)
    return ElboReport(n_toys, float(max(excess)), float(max(gaps)), n_se)


@dataclass
class CovarianceReport:
    max_cov_error: float
    max_entropy_change: float
    cov_tol: float = 1e-12
    entropy_tol: float = 1e-10

    @property
    def passed(self) -> bool:
        return self.max_cov_error <= self.cov_tol and self.max_entropy_change <= self.entropy_tol


def covariance_suite(n_cases: int = 1000, seed: int = 0) -> CovarianceReport:
    """``propagate_covariance`` against an explicit ``G S G^T`` product, and
    the entropy term under random rigid motions of lifted clouds."""
    rng = np.random.default_rng(seed)
    cov_err = 0.0
    for _ in range(n_cases):
        w, h = rng.integers(8, 700, 2)
        k = CameraIntrinsics(*rng.uniform(20, 800, 2), rng.uniform(0, w), rng.uniform(0, h))
        u, v = rng.uniform(0, w), rng.uniform(0, h)
        z, sz = rng.uniform(0.1, 80), rng.uniform(0, 5)
        su, sv = rng.uniform(0.05, 2, 2)
        G = np.asarray(jacobian_gamma(u, v, z, k))
        explicit = G @ np.diag([su**2, sv**2, sz**2]) @ G.T
        got = np.asarray(propagate_covariance(u, v, z, sz, su, sv, k))
        cov_err = max(cov_err, float(np.abs(got - explicit).max()))
    ent = 0.0
    k = CameraIntrinsics.centered(64, 48, 56.0)
    for _ in range(100):
        d = DepthDistribution(rng.uniform(1, 20, (48, 64)), rng.uniform(0.05, 2, (48, 64)))
        cloud = lift_cloud(d, k, grid_pixels(64, 48, GridSpec(8, 4, *rng.integers(1, [9, 5]))))
        moved = cloud.transformed(rodrigues(rng.normal(0, 1.5, 3)), rng.normal(0, 10, 3))
        ent = max(ent, abs(float(entropy_term(moved)) - float(entropy_term(cloud))))
    return CovarianceReport(cov_err, ent)


@dataclass
class EndToEndReport:
    initial_rmse: float
    final_rmse: float
    seconds: float
    ratio_tol: float = 0.1
    seconds_tol: float = 300.0

    @property
    def ratio(self) -> float:
        return self.final_rmse / self.initial_rmse

    @property
    def passed(self) -> bool:
        return self.ratio <= self.ratio_tol and self.seconds < self.seconds_tol


def end_to_end(exp: dict | None = None) -> EndToEndReport:
    """Two-stage optimization of the bundled experiment; RMSE pooled over frames."""
    from .evalkit import depth_metrics
    from .experiment import initial_rmse, load_experiment, optimizer_config

    exp = load_experiment() if exp is None else exp
    scene = synth_scene(exp["scene"], int(exp.get("seed", 0)))
    cfg = optimizer_config(exp)
    res = optimize_two_stage(scene, cfg)
    gt = np.concatenate(scene.gt_depth, axis=1)
    pred = np.concatenate([d.mean for d in res.distributions], axis=1)
    return EndToEndReport(initial_rmse(scene, cfg), depth_metrics(pred, gt).rmse, res.seconds)


@dataclass
class CalibrationReport:
    seeds: tuple
    nll: tuple  # per seed, learned sigma with the mean it was trained on
    uniform_nll: tuple  # per seed, best single sigma for that mean
    transfer_nll: tuple  # per seed, learned sigma paired with a fresh error draw
    transfer_uniform_nll: tuple
    seconds: float

    @property
    def passed(self) -> bool:
        return all(a < b for a, b in zip(self.nll, self.uniform_nll))


def error_amplitude(shape, lo: float = 0.02, hi: float = 0.4) -> np.ndarray:
    """Residual error scale growing linearly from ``lo`` at the left edge to
    ``hi`` at the right edge."""
    w = shape[-1]
    return np.broadcast_to(lo + (hi - lo) * np.arange(w) / (w - 1), shape)


CALIBRATION_SEEDS = (11, 12, 13)  # not used while developing the objective


def calibration(exp: dict | None = None, seeds=CALIBRATION_SEEDS, lo: float = 0.02,
                hi: float = 0.4) -> CalibrationReport:
    """Stage 2 on means carrying spatially varying random error, one run per
    error draw.  The NLL of ground truth under the learned sigma is compared
    with the best uniform sigma for the same mean.  As a diagnostic the
    learned sigma is also scored against a second draw with the same
    amplitude map."""
    from .evalkit import nll, uniform_opt_nll
    from .experiment import load_experiment, optimizer_config

    exp = load_experiment() if exp is None else exp
    scene = synth_scene(exp["scene"], int(exp.get("seed", 0)))
    cfg = optimizer_config(exp)
    gt = np.stack(scene.gt_depth)
    g = np.concatenate(list(gt), axis=1)
    amp = error_amplitude(gt.shape, lo, hi)
    ours, uni, t_ours, t_uni = [], [], [], []
    start = time.perf_counter()
    for seed in seeds:
        rng = np.random.default_rng(seed)
        mean = gt + amp * rng.standard_normal(gt.shape)
        state = initial_state(scene, cfg)
        state.params = {**state.params, "mean": jnp.asarray(mean)}
        run_stage(state, scene, cfg, 2, cfg.stage2_steps, np.random.default_rng(cfg.seed))
        std = np.concatenate([d.std for d in state.distributions(cfg.sigma_min)], axis=1)
        m = np.concatenate(list(mean), axis=1)
        ours.append(nll(DepthDistribution(m, std), g))
        uni.append(uniform_opt_nll(m, g)[1])
        other = np.concatenate(list(gt + amp * rng.standard_normal(gt.shape)), axis=1)
        t_ours.append(nll(DepthDistribution(other, std), g))
        t_uni.append(uniform_opt_nll(other, g)[1])
    return CalibrationReport(tuple(seeds), tuple(ours), tuple(uni), tuple(t_ours), tuple(t_uni),
                             time.perf_counter() - start)


@dataclass
class RefineReport:
    before: object
    after: object
    tol: float = 1e-6

    @property
    def improved(self) -> tuple:
        return tuple(getattr(self.after, m) < getattr(self.before, m) for m in ("abs_rel", "sq_rel", "rmse"))

    @property
    def worst_regression(self) -> float:
        lower = [self.after.abs_rel - self.before.abs_rel, self.after.sq_rel - self.before.sq_rel,
                 self.after.rmse - self.before.rmse, self.after.rmse_log - self.before.rmse_log]
        higher = [self.before.d1 - self.after.d1, self.before.d2 - self.after.d2, self.before.d3 - self.after.d3]
        return max(lower + higher)

    @property
    def passed(self) -> bool:
        return all(self.improved) and self.worst_regression <= self.tol


def refinement(shift: float = 0.15, seed: int = 0, cfg: RefineConfig = RefineConfig()) -> RefineReport:
    """Means sit ``shift`` standard deviations below ground truth on every
    frame with a previous frame; metrics before and after refinement."""
    from .evalkit import depth_metrics
    from .experiment import load_experiment

    exp = load_experiment()
    scene = synth_scene(exp["scene"], int(exp.get("seed", 0)))
    rng = np.random.default_rng(seed)
    means, refined, gts = [], [], []
    for t in range(1, scene.n_frames):
        gt = np.asarray(scene.gt_depth[t])
        std = rng.uniform(0.1, 1.0, gt.shape)
        d = DepthDistribution(gt - shift * std, std)
        means.append(d.mean)
        refined.append(refine_depth(d, scene.frames[t], scene.frames[t - 1], scene.gt_poses[t - 1],
                                    scene.intrinsics, cfg))
        gts.append(gt)
    g = np.concatenate(gts, axis=1)
    return RefineReport(depth_metrics(np.concatenate(means, axis=1), g),
                        depth_metrics(np.concatenate(refined, axis=1), g))


@dataclass
class RemovalReport:
    spearman: float
    columns: dict

    @property
    def monotone(self) -> dict:
        return {k: bool(np.all(np.diff(v) <= 0)) for k, v in self.columns.items()}

    @property
    def passed(self) -> bool:
        return self.spearman >= 0.9 and all(self.monotone.values())


def removal_trend(seed: int = 0, jitter: float = 0.15) -> RemovalReport:
    """Outlier-removal curve on the bundled ground truth with heavy-tailed
    errors and a sigma equal to the error size times log-normal jitter."""
    from scipy.stats import spearmanr

    from .evalkit import outlier_removal_curve
    from .experiment import load_experiment

    exp = load_experiment()
    scene = synth_scene(exp["scene"], int(exp.get("seed", 0)))
    gt = np.concatenate(scene.gt_depth, axis=1)
    rng = np.random.default_rng(seed)
    err = 0.05 * gt * rng.standard_t(3, gt.shape)
    err = np.clip(err, -0.5 * gt, None)
    std = np.abs(err) * np.exp(jitter * rng.standard_normal(gt.shape))
    rho = float(spearmanr(std.ravel(), np.abs(err).ravel())[0])
    curve = outlier_removal_curve(DepthDistribution(gt + err, std), gt)
    return RemovalReport(rho, {m: curve.column(m) for m in ("abs_rel", "sq_rel", "rmse", "rmse_log")})


@dataclass
class TimingReport:
    seconds: float
    budget: float = 0.2

    @property
    def passed(self) -> bool:
        return self.seconds < self.budget


def refine_timing(width: int = 640, height: int = 192, repeats: int = 5, seed: int = 0) -> TimingReport:
    """Median wall time of one refinement call after a warm-up call that
    pays the one-off compilation."""
    rng = np.random.default_rng(seed)
    k = CameraIntrinsics.centered(width, height, 0.58 * width)
    d = DepthDistribution(rng.uniform(2, 40, (height, width)), rng.uniform(0.1, 2, (height, width)))
    imgs = rng.uniform(0, 1, (2, height, width, 3))
    pose = se3_from_params([0.0, 0.01, 0.0], [0.0, 0.0, 0.5])
    refine_depth(d, imgs[0], imgs[1], pose, k)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        refine_depth(d, imgs[0], imgs[1], pose, k)
        times.append(time.perf_counter() - t0)
    return TimingReport(float(np.median(times)))


def grid_coverage(width: int, height: int, n_c: int, n_r: int) -> bool:
    """Every pixel is hit exactly once over all offset pairs."""
    hits = np.zeros((height, width), int)
    for m_c in range(1, n_c + 1):
        for m_r in range(1, n_r + 1):
            px = grid_pixels(width, height, GridSpec(n_c, n_r, m_c, m_r))
            np.add.at(hits, (px[:, 1], px[:, 0]), 1)
    return bool(np.all(hits == 1))
