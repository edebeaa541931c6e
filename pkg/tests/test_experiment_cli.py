import csv
import json

import numpy as np
import pytest

from vardepth import io
from vardepth.cli import main
from vardepth.errors import ContractViolation
from vardepth.experiment import evaluate, load_experiment, run_experiment

TINY = {"width": 16, "height": 12, "focal": 14.0, "n_frames": 2}
FAST = {"stage1_steps": 3, "stage2_steps": 2, "grid": [4, 3]}


def tiny_experiment(tmp_path, **extra):
    exp = {"name": "tiny", "scene": TINY, "seed": 0, "optimizer": FAST, "refine": {"enabled": True}, **extra}
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(exp))
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    out = tmp / "out"
    assert main(["run", str(tiny_experiment(tmp)), "--out", str(out), "--steps", "3", "2"]) == 0
    return out


class TestLoadExperiment:
    def test_bundled_scene_is_inlined(self):
        exp = load_experiment()
        assert exp["scene"]["width"] == 64 and exp["scene"]["height"] == 48
        assert exp["optimizer"]["lr"] == 0.01

    def test_relative_scene_path(self, tmp_path):
        (tmp_path / "s.json").write_text(json.dumps(TINY))
        (tmp_path / "e.json").write_text(json.dumps({"scene": "s.json"}))
        assert load_experiment(tmp_path / "e.json")["scene"] == TINY

    def test_missing_scene(self, tmp_path):
        (tmp_path / "e.json").write_text(json.dumps({"scene": "nowhere.json"}))
        with pytest.raises(FileNotFoundError):
            load_experiment(tmp_path / "e.json")


class TestRun:
    def test_artifacts(self, run_dir):
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert "failed_stage" not in manifest
        for name in ("config.json", "history.csv", "metrics.csv", "poses.json", "scene/scene.json",
                     "estimate/mean_01.f32", "estimate/refined_mean_01.f32", "eval_mean_all.json"):
            assert name in manifest["artifacts"], name
            assert (run_dir / name).exists()
        assert set(manifest["stages"]) == {"synth", "optimize", "refine", "eval"}
        assert len(manifest["experiment_sha256"]) == 64

    def test_history_length(self, run_dir):
        rows = list(csv.DictReader(open(run_dir / "history.csv")))
        assert len(rows) == 5

    def test_metrics_rows(self, run_dir):
        names = [r["name"] for r in csv.DictReader(open(run_dir / "metrics.csv"))]
        assert names == ["mean_all", "refined_all", "mean_covisible", "refined_covisible"]

    def test_estimate_shapes(self, run_dir):
        dists = io.load_distributions(run_dir / "estimate")
        assert len(dists) == 2 and dists[1].mean.shape == (12, 16)
        assert np.all(dists[1].std > 0)

    def test_failure_writes_error(self, tmp_path):
        out = tmp_path / "out"
        with pytest.raises(ContractViolation):
            run_experiment(out_dir=out, exp={"scene": {**TINY, "generator": "sphere"}}, log=lambda *_: None)
        err = json.loads((out / "error.json").read_text())
        assert err["stage"] == "synth" and err["error"] == "ContractViolation"
        assert json.loads((out / "manifest.json").read_text())["failed_stage"] == "synth"

    def test_failure_after_synth_keeps_scene(self, tmp_path):
        out = tmp_path / "out"
        with pytest.raises(ContractViolation):
            run_experiment(out_dir=out, exp={"scene": TINY, "optimizer": {"grid": [0, 3]}}, log=lambda *_: None)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["failed_stage"] == "optimize"
        assert "scene/scene.json" in manifest["artifacts"]


class TestEvaluate:
    def test_pools_frames(self, rng):
        gt = [rng.uniform(2, 6, (4, 5)) for _ in range(3)]
        means = [g * 1.1 for g in gt]
        ev = evaluate(means, [np.full((4, 5), 0.3)] * 3, gt)
        assert ev["metrics"].valid_count == 60
        assert ev["metrics"].abs_rel == pytest.approx(0.1, rel=1e-12)


class TestSubcommands:
    def test_pipeline(self, tmp_path, capsys):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps(TINY))
        scene, est, ref, ev = (tmp_path / n for n in ("scene", "est", "ref", "ev"))
        assert main(["synth", "--spec", str(spec), "--seed", "1", "--out", str(scene)]) == 0
        assert main(["optimize", "--scene", str(scene), "--seed", "1", "--out", str(est),
                     "--stage1-steps", "2", "--stage2-steps", "1", "--grid", "4", "3"]) == 0
        assert len(list(csv.DictReader(open(est / "history.csv")))) == 3
        assert json.loads((est / "config.json").read_text())["grid"] == [4, 3]
        assert main(["refine", "--scene", str(scene), "--estimate", str(est), "--out", str(ref), "--nk", "4"]) == 0
        assert (ref / "mean_01.f32").exists()
        assert main(["eval", "--scene", str(scene), "--estimate", str(est), "--out", str(ev), "--covisible"]) == 0
        assert (ev / "metrics.csv").exists() and (ev / "removal.csv").exists()
        assert "uniform-opt nll" in capsys.readouterr().out

    def test_seed_required(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["synth", "--out", str(tmp_path)])

    def test_sinkhorn_check_exit_code(self, capsys):
        assert main(["sinkhorn-check", "--cases", "5"]) == 0
        assert capsys.readouterr().out.startswith("PASS")
        assert main(["sinkhorn-check", "--cases", "5", "--eps-start", "1e-3"]) == 1
        assert capsys.readouterr().out.startswith("FAIL")

    def test_elbo_check(self, capsys):
        main(["elbo-check", "--toys", "3", "--samples", "512"])
        assert "elbo: 3 toys" in capsys.readouterr().out
