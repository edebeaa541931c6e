import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vardepth.errors import ContractViolation, DomainError
from vardepth.geometry import (
    CameraIntrinsics,
    Gaussian3,
    RigidTransform,
    backproject,
    jacobian_gamma,
    project,
    propagate_covariance,
    rodrigues,
    rotation_log,
    se3_from_params,
    transform_gaussian,
)

UNIT = CameraIntrinsics(1.0, 1.0, 0.0, 0.0)

finite = st.floats(-50, 50, allow_nan=False)
positive = st.floats(0.05, 100.0)
axis_angles = st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3)


def random_transform(rng):
    return se3_from_params(rng.uniform(-np.pi, np.pi, 3) / np.sqrt(3), rng.normal(0, 2, 3))


def random_gaussian(rng):
    a = rng.normal(size=(3, 3))
    return Gaussian3(rng.normal(size=3), a @ a.T + 0.1 * np.eye(3))


class TestCameraIntrinsics:
    def test_rejects_nonpositive_focal(self):
        with pytest.raises(DomainError):
            CameraIntrinsics(0.0, 1.0, 0.0, 0.0)

    def test_centered_principal_point(self):
        k = CameraIntrinsics.centered(64, 48, 56.0)
        assert (k.cx, k.cy) == (31.5, 23.5)

    def test_k_inverse(self):
        k = CameraIntrinsics(50.0, 60.0, 10.0, 7.0)
        np.testing.assert_allclose(k.K @ k.K_inv, np.eye(3), atol=1e-14)

    def test_json_round_trip(self, tmp_path):
        k = CameraIntrinsics(50.0, 60.0, 10.0, 7.0, 32, 24)
        k.save(tmp_path / "k.json")
        assert set(json.loads((tmp_path / "k.json").read_text())) == {"fx", "fy", "cx", "cy", "width", "height"}
        assert CameraIntrinsics.load(tmp_path / "k.json") == k


class TestBackproject:
    def test_principal_ray(self):
        k = CameraIntrinsics(3.0, 5.0, 11.0, 13.0)
        np.testing.assert_array_equal(backproject(11.0, 13.0, 7.0, k), [0.0, 0.0, 7.0])

    @pytest.mark.parametrize("f, expected", [(1.0, [8.0, 12.0, 4.0]), (2.0, [4.0, 6.0, 4.0])])
    def test_direct_substitution(self, f, expected):
        np.testing.assert_allclose(backproject(2.0, 3.0, 4.0, CameraIntrinsics(f, f, 0.0, 0.0)), expected)

    @pytest.mark.parametrize("z", [0.0, -1.0])
    def test_nonpositive_depth(self, z):
        with pytest.raises(DomainError):
            backproject(1.0, 1.0, z, UNIT)

    @given(finite, finite, positive)
    def test_round_trip(self, u, v, z):
        k = CameraIntrinsics(40.0, 45.0, 20.0, 15.0)
        uv, valid = project(backproject(u, v, z, k), k)
        assert bool(valid)
        np.testing.assert_allclose(uv, [u, v], atol=1e-10)

    def test_behind_camera_is_invalid(self):
        _, valid = project(np.array([0.0, 0.0, -1.0]), UNIT)
        assert not bool(valid)


class TestJacobianGamma:
    def test_center_is_diagonal(self):
        k = CameraIntrinsics(2.0, 4.0, 5.0, 6.0)
        np.testing.assert_allclose(jacobian_gamma(5.0, 6.0, 8.0, k), np.diag([4.0, 2.0, 1.0]))

    def test_direct_substitution(self):
        np.testing.assert_allclose(jacobian_gamma(2.0, 3.0, 4.0, UNIT), [[4, 0, 2], [0, 4, 3], [0, 0, 1]])

    @given(finite, finite, positive, positive, positive)
    def test_determinant(self, u, v, z, fx, fy):
        k = CameraIntrinsics(fx, fy, 1.0, -2.0)
        np.testing.assert_allclose(np.linalg.det(jacobian_gamma(u, v, z, k)), z * z / (fx * fy), rtol=1e-9)


class TestPropagateCovariance:
    def test_center_pixel(self):
        np.testing.assert_allclose(propagate_covariance(0.0, 0.0, 10.0, 2.0, 0.5, 0.5, UNIT), np.diag([25, 25, 4]))

    def test_off_center_pixel(self):
        got = propagate_covariance(1.0, 0.0, 10.0, 2.0, 0.5, 0.5, UNIT)
        np.testing.assert_allclose(got, [[29, 0, 4], [0, 25, 0], [4, 0, 4]], atol=1e-12)

    def test_degenerate_is_zero(self):
        np.testing.assert_array_equal(propagate_covariance(3.0, 2.0, 5.0, 0.0, 0.0, 0.0, UNIT), np.zeros((3, 3)))

    def test_requires_intrinsics(self):
        with pytest.raises(ContractViolation):
            propagate_covariance(0.0, 0.0, 1.0, 1.0)

    def test_negative_sigma(self):
        with pytest.raises(DomainError):
            propagate_covariance(0.0, 0.0, 1.0, -1.0, k=UNIT)

    @given(finite, finite, positive, st.floats(0, 5), st.floats(0, 3), st.floats(0, 3))
    def test_symmetric_psd(self, u, v, mz, sz, su, sv):
        c = np.asarray(propagate_covariance(u, v, mz, sz, su, sv, CameraIntrinsics(30.0, 30.0, 0.0, 0.0)))
        np.testing.assert_array_equal(c, c.T)
        assert np.linalg.eigvalsh(c).min() >= -1e-12 * max(1.0, np.abs(c).max())

    def test_matches_linearized_monte_carlo(self, rng):
        k = CameraIntrinsics(50.0, 55.0, 32.0, 24.0)
        u, v, mz, sz, s_uv = 50.0, 5.0, 6.0, 0.4, 0.5
        G = np.asarray(jacobian_gamma(u, v, mz, k))
        eps = rng.standard_normal((100_000, 3)) * [s_uv, s_uv, sz]
        sample_cov = np.cov((eps @ G.T).T)
        c = np.asarray(propagate_covariance(u, v, mz, sz, s_uv, s_uv, k))
        assert np.linalg.norm(sample_cov - c) / np.linalg.norm(c) < 0.03


class TestRigidTransform:
    def test_zero_params_identity(self):
        t = se3_from_params(np.zeros(3), np.zeros(3))
        np.testing.assert_array_equal(t.rotation, np.eye(3))
        np.testing.assert_array_equal(t.translation, np.zeros(3))

    def test_quarter_turn_about_z(self):
        t = se3_from_params([0.0, 0.0, np.pi / 2], np.zeros(3))
        np.testing.assert_allclose(t.apply(np.array([1.0, 0.0, 0.0])), [0.0, 1.0, 0.0], atol=1e-15)

    @given(axis_angles)
    def test_orthonormal(self, w):
        R = np.asarray(rodrigues(np.array(w)))
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-10)
        assert abs(np.linalg.det(R) - 1.0) < 1e-10

    @given(st.lists(st.floats(-1.8, 1.8), min_size=3, max_size=3))  # norm < pi: principal branch
    def test_log_inverts_exp(self, w):
        np.testing.assert_allclose(rotation_log(np.asarray(rodrigues(np.array(w)))), w, atol=1e-8)

    def test_rejects_reflection(self):
        with pytest.raises(DomainError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]))

    def test_inverse_composition(self, rng):
        t = random_transform(rng)
        np.testing.assert_allclose((t @ t.inverse()).matrix, np.eye(4), atol=1e-12)

    def test_dict_round_trip(self, rng):
        t = random_transform(rng)
        np.testing.assert_array_equal(RigidTransform.from_dict(t.to_dict()).matrix, t.matrix)


class TestTransformGaussian:
    def test_identity(self, rng):
        g = random_gaussian(rng)
        out = transform_gaussian(RigidTransform.identity(), g)
        np.testing.assert_allclose(out.mean, g.mean, atol=0)
        np.testing.assert_allclose(out.cov, g.cov, atol=1e-15)

    def test_translation_only(self, rng):
        g = random_gaussian(rng)
        out = transform_gaussian(RigidTransform(np.eye(3), np.array([1.0, -2.0, 3.0])), g)
        np.testing.assert_allclose(out.mean, g.mean + [1.0, -2.0, 3.0])
        np.testing.assert_array_equal(out.cov, g.cov)

    def test_determinant_preserved(self, rng):
        for _ in range(20):
            g = random_gaussian(rng)
            out = transform_gaussian(random_transform(rng), g)
            np.testing.assert_allclose(np.linalg.det(out.cov), np.linalg.det(g.cov), rtol=1e-10)

    def test_inverse_round_trip(self, rng):
        for _ in range(20):
            g, t = random_gaussian(rng), random_transform(rng)
            back = transform_gaussian(t.inverse(), transform_gaussian(t, g))
            np.testing.assert_allclose(back.mean, g.mean, atol=1e-10)
            np.testing.assert_allclose(back.cov, g.cov, atol=1e-10)
