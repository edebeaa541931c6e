"""Mahalanobis-Wasserstein loss: cost matrices, entropic transport and grid sampling.

The entropic solver follows the classic alternating scaling of
``G = exp(-C / eps)``::

    b = 1
    repeat n_it times:
        a = (1/N) / (G b)
        b = (1/N) / (G^T a)
    plan = diag(a) G diag(b);  value = <plan, C>

In the log domain the scalings become log-sum-exp updates of the log
potentials, which keeps ``eps = 1e-3`` usable with costs in the hundreds.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import logsumexp
from scipy.optimize import linear_sum_assignment

from .depthdist import GaussianCloud
from .errors import ContractViolation, is_concrete

EPSILON = 1e-3
N_ITER = 30
EXACT_MAX_N = 10
ANNEAL_LEVELS = 40
ANNEAL_LEVEL_IT = 200


@dataclass(frozen=True)
class GridSpec:
    """Sparse sampling grid: every ``n_c``-th column and ``n_r``-th row,
    starting at 1-based offsets ``(m_c, m_r)``."""

    n_c: int
    n_r: int
    m_c: int = 1
    m_r: int = 1

    def __post_init__(self):
        if self.n_c < 1 or self.n_r < 1:
            raise ContractViolation("grid intervals must be >= 1")
        if not (1 <= self.m_c <= self.n_c and 1 <= self.m_r <= self.n_r):
            raise ContractViolation(
                f"offsets must satisfy 1 <= m_c <= n_c and 1 <= m_r <= n_r, got {self}"
            )

    def with_offsets(self, m_c: int, m_r: int) -> "GridSpec":
        return GridSpec(self.n_c, self.n_r, int(m_c), int(m_r))

    def random_offsets(self, rng: np.random.Generator) -> "GridSpec":
        return self.with_offsets(rng.integers(1, self.n_c + 1), rng.integers(1, self.n_r + 1))

    def all_offsets(self):
        for m_r in range(1, self.n_r + 1):
            for m_c in range(1, self.n_c + 1):
                yield self.with_offsets(m_c, m_r)


def grid_pixels(width: int, height: int, spec: GridSpec) -> np.ndarray:
    """``(N, 2)`` array of ``(u, v)`` grid pixels, row-major order."""
    us = np.arange(spec.m_c - 1, width, spec.n_c)
    vs = np.arange(spec.m_r - 1, height, spec.n_r)
    uu, vv = np.meshgrid(us, vs)
    return np.stack([uu.ravel(), vv.ravel()], axis=1)


@dataclass(frozen=True, eq=False)
class TransportPlan:
    coupling: np.ndarray
    value: float
    row_residual: float
    col_residual: float
    n_iter: int

    @property
    def residual(self) -> float:
        return max(self.row_residual, self.col_residual)

    def stats(self) -> dict:
        return {
            "value": float(self.value),
            "row_residual": float(self.row_residual),
            "col_residual": float(self.col_residual),
            "n_iter": int(self.n_iter),
            "n": int(np.shape(self.coupling)[0]),
        }

    def to_csv(self, path, min_weight: float = 0.0) -> None:
        """Write ``i, j, weight`` rows for entries above ``min_weight``."""
        P = np.asarray(self.coupling)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "j", "weight"])
            for i, j in zip(*np.nonzero(P > min_weight)):
                writer.writerow([int(i), int(j), repr(float(P[i, j]))])

    def stats_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.stats(), fh, indent=2)


# ---------------------------------------------------------------------------
# cost


def _inverse_cholesky(covs):
    L = jnp.linalg.cholesky(covs)
    eye = jnp.broadcast_to(jnp.eye(3), covs.shape)
    return jax.scipy.linalg.solve_triangular(L, eye, lower=True)


def _build_cost(sampled, means, covs):
    Linv = _inverse_cholesky(covs)
    diff = sampled[:, None, :] - means[None, :, :]
    y = jnp.einsum("jab,ijb->ija", Linv, diff)
    return jnp.sum(y * y, axis=-1)


def build_cost(sampled, target: GaussianCloud):
    """``C[i, j]`` = squared Mahalanobis distance of sampled point ``i`` under
    target Gaussian ``j``."""
    sampled = jnp.asarray(sampled, float)
    if sampled.ndim != 2 or sampled.shape[1] != 3 or sampled.shape[0] != len(target):
        raise ContractViolation(
            f"sampled points {sampled.shape} do not match a target cloud of length {len(target)}"
        )
    return _build_cost(sampled, jnp.asarray(target.means), jnp.asarray(target.covs))


# ---------------------------------------------------------------------------
# Sinkhorn


def _log_updates(cost, eps, log_b):
    n, m = cost.shape
    log_r = -math.log(n)
    log_c = -math.log(m)
    S = -cost / eps
    log_a = log_r - logsumexp(S + log_b[None, :], axis=1)
    log_b = log_c - logsumexp(S + log_a[:, None], axis=0)
    return log_a, log_b


def _log_plan(cost, eps, log_a, log_b):
    return jnp.exp(log_a[:, None] - cost / eps + log_b[None, :])


def _sinkhorn_plan(cost, eps=EPSILON, n_it=N_ITER, log_domain=True):
    """Traceable fixed-iteration solver; the loop is unrolled by ``lax.scan``
    so reverse-mode differentiation walks back through every scaling."""
    n, m = cost.shape
    if log_domain:

        def body(log_b, _):
            _, log_b = _log_updates(cost, eps, log_b)
            return log_b, None

        log_b = jnp.zeros(m)
        if n_it > 1:
            log_b, _ = jax.lax.scan(body, log_b, None, length=n_it - 1)
        log_a, log_b = _log_updates(cost, eps, log_b)
        return _log_plan(cost, eps, log_a, log_b)

    G = jnp.exp(-cost / eps)

    def body(b, _):
        a = (1.0 / n) / (G @ b)
        b = (1.0 / m) / (G.T @ a)
        return b, a

    b, a_hist = jax.lax.scan(body, jnp.ones(m), None, length=n_it)
    return a_hist[-1][:, None] * G * b[None, :]


def _sinkhorn_value(cost, eps=EPSILON, n_it=N_ITER, log_domain=True):
    return jnp.sum(_sinkhorn_plan(cost, eps, n_it, log_domain) * cost)


@partial(jax.jit, static_argnames=("n_it",))
def _log_fixed(cost, eps, n_it):
    return _sinkhorn_plan(cost, eps, n_it, True)


@partial(jax.jit, static_argnames=("check_every",))
def _log_until(cost, eps, tol, max_it, log_b0, check_every=10):
    n, m = cost.shape

    def residual(log_a, log_b):
        P = _log_plan(cost, eps, log_a, log_b)
        return jnp.max(jnp.abs(P.sum(1) - 1.0 / n))

    def cond(state):
        k, _, _, res = state
        return (k < max_it) & (res >= tol)

    def body(state):
        k, log_a, log_b = state[:3]

        def one(_, ab):
            return _log_updates(cost, eps, ab[1])

        log_a, log_b = jax.lax.fori_loop(0, check_every, one, (log_a, log_b))
        return k + check_every, log_a, log_b, residual(log_a, log_b)

    log_a, log_b = _log_updates(cost, eps, log_b0)
    state = (1, log_a, log_b, residual(log_a, log_b))
    k, log_a, log_b, _ = jax.lax.while_loop(cond, body, state)
    return _log_plan(cost, eps, log_a, log_b), log_b, k


def eps_schedule(eps: float, eps_start: float, n_levels: int = ANNEAL_LEVELS) -> np.ndarray:
    """Geometric sequence from ``eps_start`` down to ``eps`` (inclusive)."""
    if eps_start <= eps:
        return np.array([eps])
    return np.geomspace(eps_start, eps, n_levels)


def _log_annealed(cost, eps, tol, max_it, eps_start, level_it=ANNEAL_LEVEL_IT):
    # dual potentials carry over between levels: g = eps * log_b
    log_b = jnp.zeros(cost.shape[1])
    total = 0
    levels = eps_schedule(eps, eps_start)
    for i, e in enumerate(levels):
        last = i == len(levels) - 1
        P, log_b, k = _log_until(cost, e, tol, max_it if last else min(level_it, max_it), log_b)
        total += int(k)
        if not last:
            log_b = log_b * (e / levels[i + 1])
    return P, total


def _linear_solve(cost, eps, n_it, tol):
    cost = np.asarray(cost, float)
    n, m = cost.shape
    with np.errstate(over="raise", under="ignore", divide="raise", invalid="raise"):
        G = np.exp(-cost / eps)
        b = np.ones(m)
        k = 0
        try:
            while k < n_it:
                a = (1.0 / n) / (G @ b)
                b = (1.0 / m) / (G.T @ a)
                k += 1
                if tol is not None and np.abs((a[:, None] * G * b[None, :]).sum(1) - 1.0 / n).max() < tol:
                    break
        except FloatingPointError as exc:
            raise FloatingPointError(
                "linear-domain Sinkhorn under/overflowed (exp(-C/eps) has vanishing rows or "
                "columns); use log_domain=True"
            ) from exc
    P = a[:, None] * G * b[None, :]
    if not np.all(np.isfinite(P)):
        raise FloatingPointError("linear-domain Sinkhorn produced non-finite values; use log_domain=True")
    return P, k


def sinkhorn(cost, eps: float = EPSILON, n_it: int = N_ITER, log_domain: bool = True,
             tol: float | None = None, eps_start: float | None = None) -> TransportPlan:
    """Entropic transport between uniform marginals.

    Runs ``n_it`` alternating scalings.  With ``tol`` set, iteration stops
    as soon as the row-marginal residual drops below ``tol`` and ``n_it``
    becomes the iteration cap.  The column marginal is exact after each
    full sweep up to rounding.

    ``eps_start`` (log domain with ``tol`` only) anneals the temperature
    geometrically from ``eps_start`` down to ``eps``, warm-starting each level
    from the previous potentials.  At small ``eps`` the plain iteration stalls
    along nearly flat dual directions; annealing reaches tight tolerances in
    a few thousand sweeps.  ``n_iter`` then counts sweeps over all levels.
    """
    if eps <= 0:
        raise ContractViolation("eps must be positive")
    if n_it < 1:
        raise ContractViolation("n_it must be >= 1")
    cost = jnp.asarray(cost, float)
    if cost.ndim != 2:
        raise ContractViolation("cost must be a matrix")
    if is_concrete(cost) and not np.all(np.isfinite(np.asarray(cost))):
        raise ContractViolation("cost matrix contains NaN or infinite entries")

    if not log_domain:
        P, k = _linear_solve(cost, eps, n_it, tol)
    elif tol is None:
        P, k = np.asarray(_log_fixed(cost, eps, n_it)), n_it
    else:
        P, k = _log_annealed(cost, eps, tol, n_it, eps if eps_start is None else eps_start)
        P = np.asarray(P)

    n, m = P.shape
    value = float(np.sum(P * np.asarray(cost)))
    return TransportPlan(
        coupling=P,
        value=value,
        row_residual=float(np.abs(P.sum(1) - 1.0 / n).max()),
        col_residual=float(np.abs(P.sum(0) - 1.0 / m).max()),
        n_iter=k,
    )


def exact_ot(cost) -> float:
    """Exact transport value between uniform marginals for ``N <= 10``.

    An optimal vertex of the uniform-marginal polytope is a permutation
    matrix scaled by ``1/N``, so the value is ``min_perm sum C[i, perm(i)] / N``.
    """
    C = np.asarray(cost, float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ContractViolation("exact_ot needs a square cost matrix")
    n = C.shape[0]
    if n > EXACT_MAX_N:
        raise ContractViolation(f"exact_ot is limited to N <= {EXACT_MAX_N}, got {n}")
    rows, cols = linear_sum_assignment(C)
    return float(C[rows, cols].sum() / n)


def brute_force_ot(cost) -> float:
    """Enumerate all permutations.  Only for tiny verification instances."""
    C = np.asarray(cost, float)
    n = C.shape[0]
    idx = np.arange(n)
    return min(C[idx, list(p)].sum() for p in itertools.permutations(range(n))) / n


def mw_loss(sampled_clouds, target_clouds, eps: float = EPSILON, n_it: int = N_ITER,
            log_domain: bool = True) -> float:
    """Sum over frames of the entropic transport value between each frame's
    sampled points and its target Gaussian cloud."""
    if len(sampled_clouds) != len(target_clouds):
        raise ContractViolation("one target cloud is needed per sampled point set")
    total = 0.0
    for pts, cloud in zip(sampled_clouds, target_clouds):
        total += sinkhorn(build_cost(pts, cloud), eps, n_it, log_domain).value
    return total
