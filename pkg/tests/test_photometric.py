import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vardepth.depthdist import DepthDistribution
from vardepth.errors import ContractViolation
from vardepth.geometry import CameraIntrinsics, RigidTransform, backproject
from vardepth.photometric import (
    SSIM_C1,
    bilinear_sample,
    masked_mean,
    min_reprojection_automask,
    photometric_energy,
    pixel_grid,
    project_map,
    smooth_loss,
    ssim,
    std_reg_loss,
    warp_image,
)

K = CameraIntrinsics(30.0, 30.0, 7.5, 5.5)


def random_image(rng, h=12, w=16, c=3):
    return rng.uniform(0, 1, (h, w, c))


class TestProjectMap:
    def test_identity_round_trip(self, rng):
        u, v = np.meshgrid(np.arange(16.0), np.arange(12.0))
        pts = np.asarray(backproject(u, v, rng.uniform(1, 5, (12, 16)), K))
        coords, valid = project_map(pts, K)
        assert bool(np.all(valid))
        np.testing.assert_allclose(coords[..., 0], u, atol=1e-10)
        np.testing.assert_allclose(coords[..., 1], v, atol=1e-10)

    def test_planar_parallax(self):
        z, tx = 4.0, 0.2
        u, v = np.meshgrid(np.arange(16.0), np.arange(12.0))
        pts = np.asarray(backproject(u, v, np.full((12, 16), z), K)) + [tx, 0.0, 0.0]
        coords, _ = project_map(pts, K)
        np.testing.assert_allclose(coords[..., 0], u + K.fx * tx / z, atol=1e-10)
        np.testing.assert_allclose(coords[..., 1], v, atol=1e-10)

    def test_behind_camera(self):
        _, valid = project_map(np.array([[[0.0, 0.0, -1.0], [0.0, 0.0, 2.0]]]), K)
        np.testing.assert_array_equal(valid, [[False, True]])


class TestBilinearSample:
    def test_integer_coordinates(self, rng):
        img = random_image(rng)
        out, _ = bilinear_sample(img, np.array([[3.0, 2.0], [15.0, 11.0]]))
        np.testing.assert_array_equal(out, img[[2, 11], [3, 15]])

    def test_midpoint(self):
        img = np.array([[[0.0], [1.0]]])
        out, _ = bilinear_sample(img, np.array([0.5, 0.0]))
        assert float(out[0]) == 0.5

    def test_identity_map(self, rng):
        img = random_image(rng)
        u, v = pixel_grid(12, 16)
        out, _ = bilinear_sample(img, np.stack([u, v], -1))
        np.testing.assert_array_equal(out, img)

    def test_border_clamp_and_invalid(self, rng):
        img = random_image(rng)
        coords = np.array([[-3.0, 2.0], [40.0, 2.0], [5.0, 5.0]])
        out, mask = bilinear_sample(img, coords, np.array([True, True, False]))
        np.testing.assert_array_equal(out[0], img[2, 0])
        np.testing.assert_array_equal(out[1], img[2, 15])
        np.testing.assert_array_equal(out[2], 0.0)
        np.testing.assert_array_equal(mask, [True, True, False])


class TestWarp:
    def test_identity_pose(self, rng):
        img = random_image(rng)
        warped, valid = warp_image(img, rng.uniform(1, 9, (12, 16)), RigidTransform.identity(), K)
        # back-projection round trip leaves coordinates off the lattice by rounding only
        np.testing.assert_allclose(warped, img, atol=1e-13)
        assert bool(np.all(valid))

    def test_translation_invalidates_border(self, rng):
        warped, valid = warp_image(random_image(rng), np.full((12, 16), 3.0),
                                   RigidTransform(np.eye(3), np.array([0.5, 0.0, 0.0])), K)
        # shift of fx * tx / z = 5 px pushes the last five columns out of view
        assert not np.any(np.asarray(valid)[:, -5:]) and np.all(np.asarray(valid)[:, :-5])

    @pytest.mark.parametrize("scene_name", ["tiny_scene", "bundled_scene"])
    def test_rendering_consistency(self, scene_name, request):
        scene = request.getfixturevalue(scene_name)
        for t in range(1, scene.n_frames):
            warped, valid = warp_image(scene.frames[t - 1], scene.gt_depth[t], scene.gt_poses[t - 1],
                                       scene.intrinsics)
            energy = photometric_energy(scene.frames[t], warped)
            assert float(masked_mean(energy, valid)) <= 5e-3


class TestSSIM:
    def test_identical(self, rng):
        img = random_image(rng)
        np.testing.assert_allclose(ssim(img, img), 1.0, atol=1e-12)

    def test_flat_patches(self):
        got = ssim(np.full((5, 5, 3), 0.2), np.full((5, 5, 3), 0.8))
        expected = (2 * 0.2 * 0.8 + SSIM_C1) / (0.04 + 0.64 + SSIM_C1)
        np.testing.assert_allclose(got, expected, rtol=1e-10)
        assert expected == pytest.approx(0.4707, abs=1e-4)

    @given(st.integers(0, 10_000))
    def test_range(self, seed):
        rng = np.random.default_rng(seed)
        s = np.asarray(ssim(random_image(rng, 6, 7), random_image(rng, 6, 7)))
        assert s.min() >= -1.0 and s.max() <= 1.0

    def test_shape_mismatch(self, rng):
        with pytest.raises(ContractViolation):
            ssim(random_image(rng), random_image(rng, 12, 15))


class TestPhotometricEnergy:
    def test_identical_is_zero(self, rng):
        img = random_image(rng)
        np.testing.assert_allclose(photometric_energy(img, img), 0.0, atol=1e-12)

    def test_beta_zero_is_l1(self, rng):
        a, b = random_image(rng), random_image(rng)
        np.testing.assert_allclose(photometric_energy(a, b, 0.0), np.abs(a - b).mean(-1), atol=1e-15)

    def test_blend(self, rng):
        a, b = random_image(rng), random_image(rng)
        s = np.asarray(ssim(a, b))
        l1 = np.abs(a - b).mean(-1)
        np.testing.assert_allclose(photometric_energy(a, b), 0.425 * (1 - s) + 0.15 * l1, atol=1e-12)

    def test_substitution(self):
        # grey-level shift leaves flat windows with a known ssim
        a, b = np.full((4, 4, 3), 0.2), np.full((4, 4, 3), 0.8)
        s = (0.32 + SSIM_C1) / (0.68 + SSIM_C1)
        np.testing.assert_allclose(photometric_energy(a, b), 0.425 * (1 - s) + 0.15 * 0.6, rtol=1e-10)

    @given(st.integers(0, 10_000))
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        assert float(np.min(photometric_energy(random_image(rng, 5, 6), random_image(rng, 5, 6)))) >= 0.0


class TestAutomask:
    def test_equal_sources(self, rng):
        lp = rng.uniform(0, 1, (4, 5))
        out, mask = min_reprojection_automask(lp, lp, np.full_like(lp, 2.0), np.full_like(lp, 2.0))
        np.testing.assert_array_equal(out, lp)
        assert bool(np.all(mask))

    def test_occluded_source(self):
        out, _ = min_reprojection_automask(np.array([10.0]), np.array([0.1]), np.array([1.0]), np.array([1.0]))
        assert float(out[0]) == 0.1

    def test_static_sequence_masked(self, rng):
        l = rng.uniform(0, 1, (4, 5))
        out, mask = min_reprojection_automask(l, l, l, l)
        assert not np.any(mask)
        np.testing.assert_array_equal(out, 0.0)

    def test_invalid_source_excluded(self):
        out, mask = min_reprojection_automask(np.array([0.0, 0.0]), np.array([0.5, 0.5]), np.ones(2), np.ones(2),
                                              np.array([False, False]), np.array([True, False]))
        np.testing.assert_array_equal(out, [0.5, 0.0])
        np.testing.assert_array_equal(mask, [True, False])

    @given(st.integers(0, 10_000))
    def test_below_inputs_on_mask(self, seed):
        rng = np.random.default_rng(seed)
        maps = [rng.uniform(0, 1, (6, 6)) for _ in range(4)]
        out, mask = (np.asarray(x) for x in min_reprojection_automask(*maps))
        assert np.all(out[mask] <= maps[0][mask]) and np.all(out[mask] <= maps[1][mask])


class TestRegularizers:
    def test_constant_depth_is_smooth(self, rng):
        assert float(smooth_loss(np.full((6, 8), 3.0), random_image(rng, 6, 8))) == 0.0

    def test_disparity_ramp(self):
        u = np.arange(8.0)
        disp = np.tile(0.2 + 0.05 * u, (6, 1))
        expected = 0.05 / disp.mean()
        assert float(smooth_loss(1.0 / disp, np.full((6, 8, 3), 0.5))) == pytest.approx(expected, rel=1e-12)

    def test_edge_lowers_penalty(self):
        disp = np.tile(0.2 + 0.05 * np.arange(8.0), (6, 1))
        stripes = np.tile((np.arange(8) % 2).astype(float), (6, 1))[..., None].repeat(3, -1)
        flat = float(smooth_loss(1.0 / disp, np.full((6, 8, 3), 0.5)))
        assert float(smooth_loss(1.0 / disp, stripes)) < flat

    def test_accepts_distribution(self, rng):
        mean = rng.uniform(1, 5, (6, 8))
        img = random_image(rng, 6, 8)
        assert smooth_loss(DepthDistribution(mean, np.ones((6, 8))), img) == smooth_loss(mean, img)

    @pytest.mark.parametrize("std, expected", [(np.ones((4, 4)), 1.0), (np.zeros((4, 4)), 0.0),
                                               (np.r_[np.zeros((2, 4)), np.full((2, 4), 2.0)], 1.0)])
    def test_std_reg(self, std, expected):
        assert float(std_reg_loss(std)) == expected

    @given(st.floats(0, 100))
    def test_std_reg_linear(self, c):
        s = np.random.default_rng(0).uniform(0, 2, (5, 5))
        assert float(std_reg_loss(c * s)) == pytest.approx(c * float(std_reg_loss(s)), rel=1e-12, abs=1e-300)
