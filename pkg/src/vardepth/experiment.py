"""Full pipeline: synthesize, optimize, refine, evaluate, write artifacts.

An experiment file is JSON::

    {
      "name": "slanted_plane",
      "scene": "slanted_plane.json" | {...scene spec...},
      "seed": 0,
      "optimizer": {...Config overrides...},
      "refine": {"enabled": true, "n_k": 10, "alpha": 0.2, "include_zero": false},
      "flip": false,
      "eval": {"cap": 80.0, "median_scaling": false, "percentages": [0, 5, 10, 15, 20, 30]}
    }

A relative ``scene`` path resolves against the experiment file, then
against the bundled data directory.  Artifacts land in one directory with a
``manifest.json``; a failing stage leaves what was written so far plus
``error.json``.
"""

from __future__ import annotations

import hashlib
import json
import platform
import sys
import time
import traceback
from dataclasses import asdict
from importlib import metadata
from importlib.resources import files
from pathlib import Path

import numpy as np

from . import evalkit, io
from .depthdist import DepthDistribution
from .objective import Config, optimize_two_stage
from .refine import RefineConfig, flip_average, flip_postprocess, refine_depth
from .synth import covisible_mask, flip_scene, synth_scene

DATA = files("vardepth") / "data"
DEFAULT_EXPERIMENT = "experiment.json"


def bundled(name: str) -> Path:
    """Path of a file shipped in the package data directory."""
    return Path(str(DATA / name))


def versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "jax", "jaxlib", "Pillow"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            pass
    try:
        out["vardepth"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        from . import __version__

        out["vardepth"] = __version__
    return out


def _resolve(ref, base: Path | None):
    if isinstance(ref, dict):
        return ref
    p = Path(ref)
    for cand in ([base / p] if base is not None else []) + [p, bundled(str(p))]:
        if cand.exists():
            return io.read_json(cand)
    raise FileNotFoundError(f"scene spec not found: {ref}")


def load_experiment(path=None) -> dict:
    """Experiment dict with its scene spec inlined."""
    path = bundled(DEFAULT_EXPERIMENT) if path is None else Path(path)
    exp = io.read_json(path)
    exp["scene"] = _resolve(exp.get("scene", {}), path.parent)
    return exp


def experiment_digest(exp: dict) -> str:
    return hashlib.sha256(json.dumps(exp, sort_keys=True).encode()).hexdigest()


def optimizer_config(exp: dict) -> Config:
    return Config.from_dict({**exp.get("optimizer", {}), "seed": int(exp.get("seed", 0))})


def refine_config(exp: dict) -> RefineConfig:
    r = {k: v for k, v in exp.get("refine", {}).items() if k != "enabled"}
    return RefineConfig(**r)


def refine_all(dists, frames, poses, k, cfg: RefineConfig) -> list:
    """Refined mean per frame; frame 0 has no previous frame and keeps its mean."""
    out = [np.asarray(dists[0].mean, float)]
    for t in range(1, len(dists)):
        out.append(refine_depth(dists[t], frames[t], frames[t - 1], poses[t - 1], k, cfg))
    return out


def evaluate(means, stds, gt, masks=None, cap=evalkit.CAP, median_scaling=False,
             percentages=evalkit.PERCENTAGES) -> dict:
    """Metrics, NLL and removal curve pooled over all frames."""
    pred = np.concatenate([np.asarray(m, float) for m in means], axis=1)
    sd = np.concatenate([np.asarray(s, float) for s in stds], axis=1)
    g = np.concatenate([np.asarray(x, float) for x in gt], axis=1)
    mask = None if masks is None else np.concatenate(masks, axis=1)
    d = DepthDistribution(pred, sd)
    sigma_u, nll_u = evalkit.uniform_opt_nll(pred, g, mask, cap=cap)
    return {
        "metrics": evalkit.depth_metrics(pred, g, mask, cap, median_scaling),
        "nll": evalkit.nll(d, g, mask, cap=cap),
        "uniform_opt_nll": nll_u,
        "uniform_opt_sigma": sigma_u,
        "curve": evalkit.outlier_removal_curve(d, g, mask, percentages, cap, median_scaling),
    }


def initial_rmse(scene, cfg: Config) -> float:
    """RMSE of the constant initial depth, pooled over all frames."""
    gt = np.concatenate([np.asarray(g, float) for g in scene.gt_depth], axis=1)
    return evalkit.depth_metrics(np.full(gt.shape, cfg.init_depth), gt).rmse


def _write_eval(out: Path, name: str, ev: dict) -> None:
    evalkit.write_curve_csv(out / f"removal_{name}.csv", ev["curve"])
    evalkit.write_json(out / f"eval_{name}.json", ev)


def run_experiment(path=None, out_dir="runs/experiment", exp: dict | None = None, log=print) -> Path:
    """Run every stage and return the artifact directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = load_experiment(path) if exp is None else exp
    manifest = {
        "experiment": exp,
        "experiment_sha256": experiment_digest(exp),
        "versions": versions(),
        "argv": sys.argv,
        "stages": {},
        "artifacts": [],
    }
    stage = "setup"
    try:
        stage = "synth"
        t0 = time.perf_counter()
        seed = int(exp.get("seed", 0))
        scene = synth_scene(exp["scene"], seed)
        io.save_scene(scene, out / "scene")
        manifest["stages"][stage] = time.perf_counter() - t0
        log(f"synth: {scene.n_frames} frames {scene.shape[1]}x{scene.shape[0]}")

        stage = "optimize"
        cfg = optimizer_config(exp)
        manifest["config_sha256"] = cfg.digest()
        cfg.save(out / "config.json")
        res = optimize_two_stage(scene, cfg)
        res.write_history(out / "history.csv")
        io.save_distributions(res.distributions, out / "estimate")
        io.write_json(out / "poses.json", [p.to_dict() for p in res.poses])
        manifest["stages"][stage] = res.seconds
        log(f"optimize: {len(res.history)} steps in {res.seconds:.1f} s")
        dists = res.distributions

        if exp.get("flip", False):
            stage = "flip"
            t0 = time.perf_counter()
            flipped = optimize_two_stage(flip_scene(scene), cfg)
            means, stds = [], []
            for d, df in zip(dists, flipped.distributions):
                m, s = flip_postprocess(d, df)
                means.append(m)
                stds.append(s)
            io.save_distributions([DepthDistribution(m, s) for m, s in zip(means, stds)], out / "flip")
            dists = [flip_average(d, df) for d, df in zip(dists, flipped.distributions)]
            manifest["stages"][stage] = time.perf_counter() - t0

        stage = "refine"
        refined = None
        if exp.get("refine", {}).get("enabled", True):
            t0 = time.perf_counter()
            refined = refine_all(dists, scene.frames, res.poses, scene.intrinsics, refine_config(exp))
            for t, m in enumerate(refined):
                io.write_raster(out / "estimate" / f"refined_mean_{t:02d}{io.RASTER_SUFFIX}", m)
            manifest["stages"][stage] = time.perf_counter() - t0

        stage = "eval"
        t0 = time.perf_counter()
        ev_cfg = exp.get("eval", {})
        kw = dict(cap=float(ev_cfg.get("cap", evalkit.CAP)),
                  median_scaling=bool(ev_cfg.get("median_scaling", False)),
                  percentages=tuple(ev_cfg.get("percentages", evalkit.PERCENTAGES)))
        stds = [d.std for d in dists]
        reports = {}
        for label, masks in (("all", None), ("covisible", [covisible_mask(scene, t) for t in range(scene.n_frames)])):
            ev = evaluate([d.mean for d in dists], stds, scene.gt_depth, masks, **kw)
            _write_eval(out, f"mean_{label}", ev)
            reports[f"mean_{label}"] = ev["metrics"]
            summary = {"nll": ev["nll"], "uniform_opt_nll": ev["uniform_opt_nll"]}
            if refined is not None:
                ev_r = evaluate(refined, stds, scene.gt_depth, masks, **kw)
                _write_eval(out, f"refined_{label}", ev_r)
                reports[f"refined_{label}"] = ev_r["metrics"]
            manifest.setdefault("summary", {})[label] = summary
        evalkit.write_metrics_csv(out / "metrics.csv", reports)
        manifest["metrics"] = {k: asdict(v) for k, v in reports.items()}
        init_rmse = initial_rmse(scene, cfg)
        manifest["summary"]["initial_rmse"] = init_rmse
        manifest["stages"][stage] = time.perf_counter() - t0
        log(f"eval: rmse {reports['mean_all'].rmse:.4f} (init {init_rmse:.4f}), "
            f"nll {manifest['summary']['all']['nll']:.4f} vs uniform {manifest['summary']['all']['uniform_opt_nll']:.4f}")
    except Exception as exc:
        manifest["failed_stage"] = stage
        io.write_json(out / "error.json", {
            "stage": stage,
            "error": type(exc).__name__,
            "message": str(exc),
            "traceback": traceback.format_exc(),
            "completed": manifest["stages"],
        })
        _finish(out, manifest)
        raise
    _finish(out, manifest)
    return out


def _finish(out: Path, manifest: dict) -> None:
    manifest["artifacts"] = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file())
    io.write_json(out / "manifest.json", manifest)
