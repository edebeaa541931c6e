import json

import numpy as np
import pytest

from vardepth.depthdist import DepthDistribution
from vardepth.errors import ContractViolation
from vardepth.io import (
    load_distributions,
    load_scene,
    read_image,
    read_png,
    read_raster,
    save_distributions,
    save_scene,
    write_png,
    write_raster,
)


class TestRaster:
    def test_round_trip_is_float32(self, rng, tmp_path):
        a = rng.normal(size=(5, 7))
        write_raster(tmp_path / "a.f32", a)
        np.testing.assert_array_equal(read_raster(tmp_path / "a.f32"), a.astype(np.float32))

    def test_layout(self, tmp_path):
        a = np.arange(6.0).reshape(2, 3)
        write_raster(tmp_path / "a.f32", a, units="px")
        assert (tmp_path / "a.f32").read_bytes() == a.astype("<f4").tobytes()
        meta = json.loads((tmp_path / "a.f32.json").read_text())
        assert meta == {"width": 3, "height": 2, "channels": 1, "units": "px"}

    def test_channels(self, rng, tmp_path):
        img = rng.uniform(size=(4, 5, 3))
        write_raster(tmp_path / "i.f32", img)
        assert read_image(tmp_path / "i.f32").shape == (4, 5, 3)

    def test_truncated(self, tmp_path):
        write_raster(tmp_path / "a.f32", np.ones((3, 3)))
        (tmp_path / "a.f32").write_bytes(b"\0" * 8)
        with pytest.raises(ContractViolation):
            read_raster(tmp_path / "a.f32")

    def test_rank(self, tmp_path):
        with pytest.raises(ContractViolation):
            write_raster(tmp_path / "a.f32", np.ones(4))


class TestPNG:
    def test_quantized_round_trip(self, rng, tmp_path):
        img = rng.uniform(size=(6, 8, 3))
        write_png(tmp_path / "i.png", img)
        back = read_png(tmp_path / "i.png")
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
        np.testing.assert_array_equal(read_image(tmp_path / "i.png"), back)


class TestSceneFiles:
    def test_round_trip(self, tiny_scene, tmp_path):
        save_scene(tiny_scene, tmp_path / "s")
        back = load_scene(tmp_path / "s")
        assert back.intrinsics == tiny_scene.intrinsics and back.seed == tiny_scene.seed
        np.testing.assert_allclose(back.gt_depth[1], tiny_scene.gt_depth[1], rtol=1e-6)
        np.testing.assert_allclose(back.frames[0], tiny_scene.frames[0], atol=1e-6)
        np.testing.assert_allclose(back.gt_poses[0].matrix, tiny_scene.gt_poses[0].matrix, atol=1e-15)

    def test_distributions(self, rng, tmp_path):
        dists = [DepthDistribution(rng.uniform(1, 5, (3, 4)), rng.uniform(0, 1, (3, 4))) for _ in range(3)]
        save_distributions(dists, tmp_path, prefix="refined_")
        back = load_distributions(tmp_path, prefix="refined_")
        assert len(back) == 3
        np.testing.assert_array_equal(back[2].std, dists[2].std.astype(np.float32))

    def test_missing_distributions(self, tmp_path):
        with pytest.raises(ContractViolation):
            load_distributions(tmp_path)
