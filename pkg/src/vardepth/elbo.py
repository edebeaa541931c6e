"""Monte-Carlo check of the evidence lower bound on a linear-Gaussian toy.

Model::

    z ~ N(m0, s0^2)                prior
    x | z ~ N(a z + b, sx^2)       likelihood

The evidence ``p(x)`` and the posterior are Gaussian in closed form.  For a
Gaussian ``q(z)`` the bound is estimated with the same three terms as the
depth objective: the entropy of ``q`` (closed form) plus Monte-Carlo
averages of the log prior and the log likelihood over reparameterized
draws ``z = m_q + s_q * eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

LOG_2PI = math.log(2 * math.pi)


def _log_normal(x, mean, std):
    return -0.5 * LOG_2PI - np.log(std) - 0.5 * ((x - mean) / std) ** 2


@dataclass(frozen=True)
class LinearGaussianToy:
    prior_mean: float
    prior_std: float
    gain: float
    offset: float
    noise_std: float
    x: float

    def __post_init__(self):
        if self.prior_std <= 0 or self.noise_std <= 0:
            raise ContractViolation("standard deviations must be positive")

    @classmethod
    def random(cls, rng: np.random.Generator) -> "LinearGaussianToy":
        m0, a, b = rng.normal(0, 2, 3)
        s0, sx = np.exp(rng.uniform(-1.5, 1.0, 2))
        z = rng.normal(m0, s0)
        return cls(float(m0), float(s0), float(a), float(b), float(sx), float(rng.normal(a * z + b, sx)))

    def log_evidence(self) -> float:
        var = self.gain**2 * self.prior_std**2 + self.noise_std**2
        return float(_log_normal(self.x, self.gain * self.prior_mean + self.offset, math.sqrt(var)))

    def posterior(self) -> tuple[float, float]:
        prec = 1 / self.prior_std**2 + self.gain**2 / self.noise_std**2
        var = 1 / prec
        mean = var * (self.prior_mean / self.prior_std**2 + self.gain * (self.x - self.offset) / self.noise_std**2)
        return float(mean), float(math.sqrt(var))

    def kl_to_posterior(self, q_mean: float, q_std: float) -> float:
        """``KL(q || posterior)``, which equals the exact bound gap."""
        m, s = self.posterior()
        return float(math.log(s / q_std) + (q_std**2 + (q_mean - m) ** 2) / (2 * s**2) - 0.5)


@dataclass(frozen=True)
class ElboResult:
    elbo: float
    stderr: float
    log_evidence: float
    entropy: float
    prior_term: float
    likelihood_term: float

    @property
    def gap(self) -> float:
        """``log p(x) - ELBO``; non-negative up to Monte-Carlo error."""
        return self.log_evidence - self.elbo


def elbo_check(toy: LinearGaussianToy, q_mean: float | None = None, q_std: float | None = None,
               n_samples: int = 4096, seed: int = 0) -> ElboResult:
    """Estimate the bound for ``q = N(q_mean, q_std^2)`` (the exact posterior
    by default) and return it next to the exact log evidence."""
    pm, ps = toy.posterior()
    q_mean = pm if q_mean is None else float(q_mean)
    q_std = ps if q_std is None else float(q_std)
    if q_std <= 0 or n_samples < 2:
        raise ContractViolation("q_std must be positive and n_samples >= 2")
    z = q_mean + q_std * np.random.default_rng(seed).standard_normal(n_samples)
    entropy = 0.5 * (LOG_2PI + 1) + math.log(q_std)
    prior = _log_normal(z, toy.prior_mean, toy.prior_std)
    lik = _log_normal(toy.x, toy.gain * z + toy.offset, toy.noise_std)
    per_sample = entropy + prior + lik
    return ElboResult(
        elbo=float(per_sample.mean()),
        stderr=float(per_sample.std(ddof=1) / math.sqrt(n_samples)),
        log_evidence=toy.log_evidence(),
        entropy=entropy,
        prior_term=float(prior.mean()),
        likelihood_term=float(lik.mean()),
    )
