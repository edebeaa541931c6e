"""Command line entry point: ``vardepth <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import evalkit, io
from .depthdist import DepthDistribution
from .experiment import bundled, evaluate, load_experiment, refine_all, run_experiment
from .objective import Config, LossWeights, optimize_two_stage
from .refine import RefineConfig, flip_average, flip_postprocess
from .synth import covisible_mask, flip_scene, synth_scene

# flag -> Config field; weights are handled separately
CONFIG_FLAGS = {
    "eps": float, "n_it": int, "sigma_uv": float, "sigma_min": float, "stage1_steps": int,
    "stage2_steps": int, "lr": float, "lr_pose": float, "init_depth": float, "init_std": float,
}


def _add_config_flags(p):
    g = p.add_argument_group("optimizer (override the config file)")
    g.add_argument("--config", type=Path, help="optimizer config JSON")
    for name, typ in CONFIG_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), type=typ, dest=name)
    g.add_argument("--w", type=float, help="transport loss weight")
    g.add_argument("--s", type=float, help="smoothness weight")
    g.add_argument("--d", type=float, help="std regularizer weight")
    g.add_argument("--grid", type=int, nargs=2, metavar=("N_C", "N_R"))
    g.add_argument("--init-pose", choices=("gt", "identity"))
    g.add_argument("--linear-domain", action="store_true", help="plain (not log-domain) Sinkhorn")


def _config(args, base: dict | None = None) -> Config:
    d = dict(base or {})
    if args.config is not None:
        d.update(json.loads(args.config.read_text()))
    for name in CONFIG_FLAGS:
        if getattr(args, name) is not None:
            d[name] = getattr(args, name)
    w = dict(d.get("weights", {}))
    for name in ("w", "s", "d"):
        if getattr(args, name) is not None:
            w[name] = getattr(args, name)
    if w:
        d["weights"] = {**asdict(LossWeights()), **w}
    if args.grid:
        d["grid"] = list(args.grid)
    if args.init_pose:
        d["init_pose"] = args.init_pose
    if args.linear_domain:
        d["log_domain"] = False
    d["seed"] = args.seed
    return Config.from_dict(d)


def _add_refine_flags(p):
    p.add_argument("--nk", type=int, default=RefineConfig.n_k, help="hypothesis count")
    p.add_argument("--alpha", type=float, default=RefineConfig.alpha, help="hypothesis range in sigmas")
    p.add_argument("--include-zero", action="store_true", help="also try the unperturbed mean")


def _refine_cfg(args) -> RefineConfig:
    return RefineConfig(n_k=args.nk, alpha=args.alpha, include_zero=args.include_zero)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    spec = json.loads(args.spec.read_text()) if args.spec else io.read_json(bundled("slanted_plane.json"))
    scene = synth_scene(spec, args.seed)
    io.save_scene(scene, args.out)
    print(f"wrote {scene.n_frames} frames ({scene.shape[1]}x{scene.shape[0]}) to {args.out}")


def cmd_optimize(args):
    scene = io.load_scene(args.scene)
    if args.flipped:
        scene = flip_scene(scene)
    cfg = _config(args, load_experiment().get("optimizer", {}) if args.bundled_defaults else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")

    def progress(state, loss):
        if args.verbose and state.step % 100 == 0:
            print(f"step {state.step} stage {state.stage} total {loss.total:.6f}", file=sys.stderr)

    res = optimize_two_stage(scene, cfg, callback=progress)
    io.save_distributions(res.distributions, out)
    io.write_json(out / "poses.json", [p.to_dict() for p in res.poses])
    res.write_history(out / "history.csv")
    io.write_json(out / "manifest.json", {"config": cfg.to_dict(), "config_sha256": cfg.digest(),
                                          "seconds": res.seconds, "scene": str(args.scene),
                                          "flipped": bool(args.flipped)})
    print(f"{len(res.history)} steps in {res.seconds:.1f} s; estimate in {out}")


def _load_poses(path):
    from .geometry import RigidTransform

    return [RigidTransform.from_dict(p) for p in io.read_json(path)]


def _combine_flip(dists, args):
    if not args.flip:
        return dists, None
    if args.flipped_estimate is None:
        raise SystemExit("--flip needs --flipped-estimate (an estimate from 'optimize --flipped')")
    flipped = io.load_distributions(args.flipped_estimate)
    post = [flip_postprocess(d, f) for d, f in zip(dists, flipped)]
    return [flip_average(d, f) for d, f in zip(dists, flipped)], post


def cmd_refine(args):
    scene = io.load_scene(args.scene)
    dists = io.load_distributions(args.estimate)
    dists, post = _combine_flip(dists, args)
    poses = _load_poses(Path(args.estimate) / "poses.json") if (Path(args.estimate) / "poses.json").exists() \
        else scene.gt_poses
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if post is not None:
        io.save_distributions([DepthDistribution(m, s) for m, s in post], out, prefix="flip_")
    refined = refine_all(dists, scene.frames, poses, scene.intrinsics, _refine_cfg(args))
    for t, (m, d) in enumerate(zip(refined, dists)):
        io.write_raster(out / f"mean_{t:02d}{io.RASTER_SUFFIX}", m)
        io.write_raster(out / f"std_{t:02d}{io.RASTER_SUFFIX}", d.std)
    print(f"refined {len(refined)} frames into {out}")


def cmd_eval(args):
    scene = io.load_scene(args.scene)
    dists = io.load_distributions(args.estimate, prefix=args.prefix)
    dists, post = _combine_flip(dists, args)
    if args.refine:
        poses = _load_poses(Path(args.estimate) / "poses.json") if (Path(args.estimate) / "poses.json").exists() \
            else scene.gt_poses
        means = refine_all(dists, scene.frames, poses, scene.intrinsics, _refine_cfg(args))
    else:
        means = [d.mean for d in dists]
    stds = [d.std for d in dists] if post is None else [s for _, s in post]
    masks = [covisible_mask(scene, t) for t in range(scene.n_frames)] if args.covisible else None
    ev = evaluate(means, stds, scene.gt_depth, masks, cap=args.cap, median_scaling=args.median_scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evalkit.write_metrics_csv(out / "metrics.csv", {"estimate": ev["metrics"]})
    evalkit.write_curve_csv(out / "removal.csv", ev["curve"])
    evalkit.write_json(out / "eval.json", ev)
    m = ev["metrics"]
    print("abs_rel sq_rel rmse rmse_log d1 d2 d3")
    print(" ".join(f"{x:.4f}" for x in m.row()))
    print(f"nll {ev['nll']:.4f}  uniform-opt nll {ev['uniform_opt_nll']:.4f}")


def _status(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def cmd_sinkhorn_check(args):
    from .checks import sinkhorn_vs_exact

    r = sinkhorn_vs_exact(args.cases, args.eps, args.tol, args.max_iter, seed=args.seed, eps_start=args.eps_start)
    print(f"{_status(r.passed)} sinkhorn: {r.cases} cases, max |value - exact| {r.max_abs_error:.2e}, "
          f"max residual {r.max_residual:.2e} ({r.unconverged} above {r.tol:g}), {r.seconds:.2f} s")
    return 0 if r.passed else 1


def cmd_grad_check(args):
    from .checks import gradient_suite

    r = gradient_suite(args.seed, args.tol, args.step)
    for name, e in r.errors.items():
        print(f"  {name:16s} {e:.3e}")
    print(f"{_status(r.passed)} gradients: worst {r.worst:.3e} (tol {r.tol:g}), {r.seconds:.1f} s")
    return 0 if r.passed else 1


def cmd_elbo_check(args):
    from .checks import elbo_suite

    r = elbo_suite(args.toys, args.samples, args.n_se, args.seed)
    print(f"{_status(r.passed)} elbo: {r.toys} toys, max (ELBO - log p)/SE {r.max_bound_excess:.2f}, "
          f"max |gap|/SE at the posterior {r.max_posterior_gap:.2f} (limit {r.n_se:g})")
    return 0 if r.passed else 1


def cmd_run(args):
    exp = load_experiment(args.experiment)
    if args.seed is not None:
        exp["seed"] = args.seed
    ref = exp.setdefault("refine", {})
    if args.refine is not None:
        ref["enabled"] = args.refine
    if args.nk is not None:
        ref["n_k"] = args.nk
    if args.alpha is not None:
        ref["alpha"] = args.alpha
    if args.flip:
        exp["flip"] = True
    if args.median_scale:
        exp.setdefault("eval", {})["median_scaling"] = True
    if args.steps is not None:
        exp.setdefault("optimizer", {}).update(stage1_steps=args.steps[0], stage2_steps=args.steps[1])
    out = run_experiment(out_dir=args.out, exp=exp)
    print(f"artifacts in {out}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vardepth", description="Gaussian depth distributions on synthetic scenes")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic scene")
    p.add_argument("--spec", type=Path, help="scene spec JSON (default: bundled slanted plane)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("optimize", help="two-stage optimization of depth distributions")
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--flipped", action="store_true", help="optimize the mirrored scene")
    p.add_argument("--bundled-defaults", action="store_true",
                   help="start from the bundled experiment's optimizer settings")
    p.add_argument("-v", "--verbose", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("refine", help="sigma-guided refinement of an estimate")
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--estimate", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--flip", action="store_true", help="flip-average before refining")
    p.add_argument("--flipped-estimate", type=Path)
    _add_refine_flags(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="metrics, NLL and outlier-removal curve")
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--estimate", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--prefix", default="", help="raster name prefix inside the estimate directory")
    p.add_argument("--refine", action="store_true", help="refine before evaluating")
    p.add_argument("--flip", action="store_true", help="use the flip post-process")
    p.add_argument("--flipped-estimate", type=Path)
    p.add_argument("--median-scale", action="store_true")
    p.add_argument("--covisible", action="store_true", help="only pixels seen by a neighbouring frame")
    p.add_argument("--cap", type=float, default=evalkit.CAP)
    _add_refine_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sinkhorn-check", help="Sinkhorn against the exact assignment")
    p.add_argument("--cases", type=int, default=200)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=20000)
    p.add_argument("--eps-start", type=float, help="annealing start temperature (default: max cost; "
                                                   "equal to --eps for no annealing)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sinkhorn_check)

    p = sub.add_parser("grad-check", help="reverse-mode vs finite-difference gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--step", type=float, default=1e-6, help="relative finite-difference step")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("elbo-check", help="Monte-Carlo bound on linear-Gaussian toys")
    p.add_argument("--toys", type=int, default=100)
    p.add_argument("--samples", type=int, default=4096)
    p.add_argument("--n-se", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_elbo_check)

    p = sub.add_parser("run", help="full pipeline from an experiment file")
    p.add_argument("experiment", nargs="?", type=Path, help="experiment JSON (default: bundled)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--refine", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--flip", action="store_true")
    p.add_argument("--nk", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--median-scale", action="store_true")
    p.add_argument("--steps", type=int, nargs=2, metavar=("STAGE1", "STAGE2"))
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    np.set_printoptions(precision=4)
    rc = args.func(args)
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
