"""Deterministic numeric kernels: Cholesky, multivariate normal density and
sampling, Schur-complement conditioning, log-space accumulation, and seeded
counter-based random streams.

All probability arithmetic is carried in log space and every density or draw
goes through a Cholesky factor; raw determinants and matrix inverses never
appear.  Matrices are plain float64 ``numpy.ndarray`` values treated as
immutable by convention.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import AllZeroMass, NotPositiveDefinite

LOG2PI = float(np.log(2.0 * np.pi))

# Leading-minor pivot threshold for "positive definite"; finite samples
# produce near-singular variance blocks that must be rejected, not factored.
PIVOT_TOL = 1e-12

# One-shot diagonal jitter allowed in mvn_sample for positive-semidefinite
# covariances.
SAMPLE_JITTER = 1e-12

_MASK64 = (1 << 64) - 1


def _mix64(a: int, b: int) -> int:
    """SplitMix64-style mix of two 64-bit values; used to derive substreams."""
    z = (a ^ ((b + 0x9E3779B97F4A7C15) & _MASK64)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class RngStream:
    """A seeded random stream backed by the counter-based Philox generator.

    Identical ``(seed, stream_id)`` pairs reproduce identical draw sequences;
    distinct ``stream_id`` values give statistically independent streams.
    ``substream`` derives child streams deterministically, so a Monte Carlo
    replication or a data-augmentation chain can own stream
    ``base.substream(replication, chain)`` without any coordination.
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def substream(self, *path: int) -> "RngStream":
        sid = self.stream_id
        for k in path:
            sid = _mix64(sid, int(k) & _MASK64)
        return RngStream(self.seed, sid)

    def fresh(self) -> "RngStream":
        """A reset copy of this stream (restarts the draw sequence)."""
        return RngStream(self.seed, self.stream_id)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def _as_square_float(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return a


def cholesky(a) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a.

    Raises NotPositiveDefinite when any leading-minor pivot is <= 1e-12, and
    ValueError when ``a`` is not symmetric within 1e-10 (relative to its
    largest entry).
    """
    a = _as_square_float(a)
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if a.size and float(np.max(np.abs(a - a.T))) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric within tolerance 1e-10")
    try:
        L = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    # numpy's factorization succeeds for any positive pivot; enforce the
    # package-wide threshold so near-singular blocks are rejected everywhere.
    if np.any(L.diagonal() ** 2 <= PIVOT_TOL):
        raise NotPositiveDefinite(
            f"leading-minor pivot below {PIVOT_TOL:g}"
        )
    return L


def mvn_logpdf(x, mu, sigma) -> float:
    """Log density of N(mu, sigma) at x, evaluated through a Cholesky factor."""
    x = np.asarray(x, dtype=np.float64).ravel()
    mu = np.asarray(mu, dtype=np.float64).ravel()
    sigma = _as_square_float(sigma)
    k = x.size
    if mu.size != k or sigma.shape[0] != k:
        raise ValueError("dimension mismatch between x, mu and sigma")
    L = cholesky(sigma)
    z = solve_triangular(L, x - mu, lower=True)
    logdet = 2.0 * float(np.sum(np.log(L.diagonal())))
    return -0.5 * (k * LOG2PI + logdet + float(z @ z))


def mvn_sample(mu, sigma, rng: RngStream) -> np.ndarray:
    """One draw mu + L z with z standard normal.

    Accepts positive-semidefinite sigma: an exactly-zero matrix returns mu,
    and a single diagonal jitter of 1e-12 is attempted before giving up.
    """
    mu = np.asarray(mu, dtype=np.float64).ravel()
    sigma = _as_square_float(sigma)
    if sigma.shape[0] != mu.size:
        raise ValueError("dimension mismatch between mu and sigma")
    if not sigma.any():
        return mu.copy()
    try:
        L = cholesky(sigma)
    except NotPositiveDefinite:
        L = cholesky(sigma + SAMPLE_JITTER * np.eye(mu.size))
    z = rng.generator.standard_normal(mu.size)
    return mu + L @ z


def conditional_normal(
    mu, sigma, restricted_idx: Sequence[int], restricted_value
) -> tuple[np.ndarray, np.ndarray]:
    """Condition N(mu, sigma) on coordinates ``restricted_idx`` being equal to
    ``restricted_value``; returns (mu_c, sigma_c) over the remaining
    coordinates in ascending index order.

    mu_c = mu_f + S_fr S_rr^-1 (v - mu_r) and sigma_c = S_ff - S_fr S_rr^-1
    S_rf (the Schur complement).
    """
    mu = np.asarray(mu, dtype=np.float64).ravel()
    sigma = _as_square_float(sigma)
    k = mu.size
    r = np.asarray(sorted(set(int(i) for i in restricted_idx)), dtype=np.intp)
    if r.size == 0:
        raise ValueError("restricted_idx must be nonempty")
    if r.size >= k or r.min() < 0 or r.max() >= k:
        raise ValueError("restricted_idx must be a proper subset of 0..dim-1")
    v = np.asarray(restricted_value, dtype=np.float64).ravel()
    if v.size != r.size:
        raise ValueError("restricted_value length must match restricted_idx")
    f = np.setdiff1d(np.arange(k), r, assume_unique=True)
    L = cholesky(sigma[np.ix_(r, r)])
    # S_fr S_rr^-1 via two triangular solves against the cross block
    half = solve_triangular(L, sigma[np.ix_(r, f)], lower=True)
    gain = solve_triangular(L.T, half, lower=False).T
    mu_c = mu[f] + gain @ (v - mu[r])
    sigma_c = sigma[np.ix_(f, f)] - half.T @ half
    return mu_c, sigma_c


def log_sum_exp(v) -> float:
    """log(sum(exp(v))) with the usual max-shift; raises AllZeroMass when every
    entry is -inf."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = float(np.max(v))
    if m == -np.inf:
        raise AllZeroMass("all log-weights are -inf")
    return m + float(np.log(np.sum(np.exp(v - m))))
