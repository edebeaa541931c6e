import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vardepth.depthdist import (
    DepthDistribution,
    GaussianCloud,
    NoiseField,
    entropy_term,
    lift_cloud,
    mahalanobis_sq,
    sample_depth,
    std_from_log,
)
from vardepth.errors import ContractViolation, DomainError
from vardepth.geometry import (
    CameraIntrinsics,
    Gaussian3,
    backproject,
    propagate_covariance,
    se3_from_params,
    transform_gaussian,
)


def raster_dist(rng, h=6, w=8):
    return DepthDistribution(rng.uniform(2, 9, (h, w)), rng.uniform(0.05, 1.0, (h, w)))


class TestDepthDistribution:
    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            DepthDistribution(np.ones((2, 3)), np.ones((3, 2)))

    def test_nonpositive_mean(self):
        with pytest.raises(DomainError):
            DepthDistribution(np.zeros((2, 2)), np.ones((2, 2)))

    def test_negative_std(self):
        with pytest.raises(DomainError):
            DepthDistribution(np.ones((2, 2)), -np.ones((2, 2)))

    def test_log_std_floor(self):
        np.testing.assert_array_equal(std_from_log(np.array([-50.0, 0.0]), 1e-3), [1e-3, 1.0])


class TestSampleDepth:
    def test_zero_noise_returns_mean(self, rng):
        d = raster_dist(rng)
        np.testing.assert_array_equal(sample_depth(d, NoiseField.zeros(d.shape)), d.mean)

    def test_single_pixel(self):
        d = DepthDistribution(np.array([[10.0]]), np.array([[0.5]]))
        assert float(sample_depth(d, NoiseField(np.array([[1.0]])))[0, 0]) == 10.5

    def test_shape_mismatch(self, rng):
        with pytest.raises(ContractViolation):
            sample_depth(raster_dist(rng), NoiseField.zeros((2, 2)))

    def test_seeded_draws_bit_identical(self, rng):
        d = raster_dist(rng)
        a = sample_depth(d, NoiseField.draw(d.shape, 7))
        b = sample_depth(d, NoiseField.draw(d.shape, 7))
        np.testing.assert_array_equal(a, b)

    def test_sample_variance(self):
        d = DepthDistribution(np.full((1, 1), 5.0), np.full((1, 1), 0.7))
        eps = np.random.default_rng(3).standard_normal((100_000, 1, 1))
        draws = np.asarray(d.mean + eps * d.std)[:, 0, 0]
        assert abs(draws.var() / 0.49 - 1.0) < 0.02


class TestLiftCloud:
    K = CameraIntrinsics(20.0, 22.0, 3.5, 2.5)

    def test_center_pixel(self):
        k = CameraIntrinsics(10.0, 10.0, 2.0, 1.0)
        d = DepthDistribution(np.full((3, 5), 7.0), np.ones((3, 5)))
        cloud = lift_cloud(d, k, [[2, 1]])
        assert len(cloud) == 1
        np.testing.assert_allclose(cloud.means[0], [0.0, 0.0, 7.0])

    def test_zero_uncertainty(self, rng):
        d = DepthDistribution(rng.uniform(1, 3, (4, 4)), np.zeros((4, 4)))
        cloud = lift_cloud(d, self.K, [[0, 0], [3, 2]], 0.0, 0.0)
        np.testing.assert_array_equal(cloud.covs, np.zeros((2, 3, 3)))

    def test_compositional(self, rng):
        d = raster_dist(rng)
        px = np.array([[0, 0], [7, 5], [3, 2], [5, 1]])
        cloud = lift_cloud(d, self.K, px, 0.5, 0.4)
        for j, (u, v) in enumerate(px):
            np.testing.assert_allclose(cloud.means[j], backproject(u, v, d.mean[v, u], self.K), atol=1e-14)
            np.testing.assert_allclose(
                cloud.covs[j], propagate_covariance(u, v, d.mean[v, u], d.std[v, u], 0.5, 0.4, self.K), atol=1e-14
            )
        np.testing.assert_array_equal(cloud.pixels, px)

    def test_out_of_raster(self, rng):
        with pytest.raises(ContractViolation):
            lift_cloud(raster_dist(rng), self.K, [[8, 0]])


class TestEntropyTerm:
    def test_identity_covariances(self):
        c = GaussianCloud(np.zeros((3, 2), int), np.zeros((3, 3)), np.tile(np.eye(3), (3, 1, 1)))
        assert float(entropy_term(c)) == 0.0

    def test_isotropic(self):
        c = GaussianCloud(np.zeros((1, 2), int), np.zeros((1, 3)), 4.0 * np.eye(3)[None])
        np.testing.assert_allclose(entropy_term(c), 0.5 * np.log(64.0), atol=1e-12)

    def test_singular(self):
        c = GaussianCloud(np.zeros((1, 2), int), np.zeros((1, 3)), np.zeros((1, 3, 3)))
        with pytest.raises(DomainError):
            entropy_term(c)

    def test_rotation_invariance(self, rng):
        d = raster_dist(rng)
        cloud = lift_cloud(d, CameraIntrinsics.centered(8, 6, 10.0), [[u, v] for v in range(6) for u in range(8)])
        t = se3_from_params(rng.normal(size=3), rng.normal(size=3))
        moved = cloud.transformed(t.rotation, t.translation)
        np.testing.assert_allclose(entropy_term(moved), entropy_term(cloud), atol=1e-10)


class TestMahalanobis:
    def test_identity(self):
        assert float(mahalanobis_sq(np.array([1.0, 2.0, 2.0]), Gaussian3(np.zeros(3), np.eye(3)))) == pytest.approx(9)

    def test_scaled_axis(self):
        g = Gaussian3(np.zeros(3), np.diag([4.0, 1.0, 1.0]))
        assert float(mahalanobis_sq(np.array([2.0, 0.0, 0.0]), g)) == pytest.approx(1.0)

    def test_singular(self):
        with pytest.raises(DomainError):
            mahalanobis_sq(np.ones(3), Gaussian3(np.zeros(3), np.zeros((3, 3))))

    @given(st.integers(0, 10_000))
    def test_rigid_invariance(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(3, 3))
        g = Gaussian3(rng.normal(size=3), a @ a.T + 0.2 * np.eye(3))
        x = rng.normal(size=3) * 3
        t = se3_from_params(rng.uniform(-1, 1, 3), rng.normal(size=3))
        moved = transform_gaussian(t, g)
        np.testing.assert_allclose(mahalanobis_sq(t.apply(x), moved), mahalanobis_sq(x, g), rtol=1e-9)
