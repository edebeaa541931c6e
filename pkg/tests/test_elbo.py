import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from vardepth.elbo import LinearGaussianToy, elbo_check
from vardepth.errors import ContractViolation

TOY = LinearGaussianToy(prior_mean=1.0, prior_std=2.0, gain=0.5, offset=-1.0, noise_std=0.7, x=0.3)


class TestLinearGaussianToy:
    def test_evidence_matches_scipy(self):
        sd = math.sqrt(0.5**2 * 4.0 + 0.49)
        assert TOY.log_evidence() == pytest.approx(stats.norm(0.5 * 1.0 - 1.0, sd).logpdf(0.3), rel=1e-12)

    def test_posterior_by_quadrature(self):
        z = np.linspace(-15, 15, 200_001)
        logp = stats.norm(1.0, 2.0).logpdf(z) + stats.norm(0.5 * z - 1.0, 0.7).logpdf(0.3)
        w = np.exp(logp - logp.max())
        w /= w.sum()
        m = float((w * z).sum())
        s = float(math.sqrt((w * (z - m) ** 2).sum()))
        np.testing.assert_allclose(TOY.posterior(), (m, s), rtol=1e-8)

    def test_kl_zero_at_posterior(self):
        assert TOY.kl_to_posterior(*TOY.posterior()) == pytest.approx(0.0, abs=1e-14)

    def test_invalid(self):
        with pytest.raises(ContractViolation):
            LinearGaussianToy(0.0, 0.0, 1.0, 0.0, 1.0, 0.0)


class TestElboCheck:
    def test_posterior_gap_small(self):
        r = elbo_check(TOY, n_samples=20_000)
        assert abs(r.gap) <= 3 * r.stderr

    @pytest.mark.parametrize("shift", [0.5, 1.0, 2.0])
    def test_shifted_mean_gap_is_kl(self, shift):
        m, s = TOY.posterior()
        r = elbo_check(TOY, m + shift * s, s, n_samples=50_000, seed=1)
        assert TOY.kl_to_posterior(m + shift * s, s) == pytest.approx(shift**2 / 2, rel=1e-10)
        assert abs(r.gap - shift**2 / 2) <= 4 * r.stderr
        assert r.gap > 0

    def test_terms_sum(self):
        r = elbo_check(TOY, 0.0, 1.0)
        assert r.elbo == pytest.approx(r.entropy + r.prior_term + r.likelihood_term, rel=1e-12)

    def test_entropy_closed_form(self):
        assert elbo_check(TOY, 0.0, 3.0).entropy == pytest.approx(stats.norm(0, 3.0).entropy(), rel=1e-14)

    def test_seeded(self):
        assert elbo_check(TOY, 0.2, 0.5, seed=4) == elbo_check(TOY, 0.2, 0.5, seed=4)

    @pytest.mark.parametrize("kw", [{"q_std": 0.0}, {"n_samples": 1}])
    def test_invalid(self, kw):
        with pytest.raises(ContractViolation):
            elbo_check(TOY, **kw)

    @given(st.integers(0, 10_000))
    def test_bound_on_random_toys(self, seed):
        rng = np.random.default_rng(seed)
        toy = LinearGaussianToy.random(rng)
        m, s = toy.posterior()
        r = elbo_check(toy, m + rng.normal(0, s), s * math.exp(rng.uniform(-1, 1)), 4096, seed)
        assert r.elbo <= r.log_evidence + 3 * r.stderr
