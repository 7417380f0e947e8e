"""Sampling distributions over dataset indices and the samplers that use them.

Probability vectors are plain 1-D float64 arrays that are strictly positive
and sum to one. Index draws always go through a :class:`numpy.random.Generator`
passed in by the caller.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

#: hard cap on square-root flattening passes
MAX_FLATTEN_ITERS = 64
#: stop flattening once successive vectors differ by less than this (sup-norm)
FLATTEN_TOL = 1e-12
#: tolerance on ``max(p) * N <= kappa`` for results stopped by the cap/tolerance
FLATTEN_SLACK = 1e-9


def check_probability_vector(probs, atol: float = 1e-12) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probability vector must be a non-empty 1-D array")
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        raise ValueError("probabilities must be finite and strictly positive")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


def normalize_weights(weights) -> np.ndarray:
    """Sampling probabilities proportional to strictly positive weights."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-D array")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be finite and strictly positive")
    return w / w.sum()


def adjust_probabilities(weights, N: int, kappa: float = 1.0,
                         return_iterations: bool = False):
    """Flatten ``normalize_weights(weights)`` until ``max(p) * N <= kappa``.

    Each pass replaces ``p`` by ``sqrt(p) / sum(sqrt(p))``, which moves the
    vector geometrically toward uniform while keeping the order of the
    entries. When ``N == M * kappa`` the target is only reached in the limit,
    so the loop also stops after :data:`MAX_FLATTEN_ITERS` passes or when a
    pass changes nothing beyond :data:`FLATTEN_TOL`.
    """
    if N < 1:
        raise ValueError("minibatch size must be >= 1")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    p = normalize_weights(weights)
    M = p.size
    if M * kappa < N:
        raise ValueError(
            f"cannot flatten: M * kappa = {M * kappa} < N = {N}; "
            "even the uniform distribution exceeds the duplicate budget"
        )
    n_iter = 0
    while p.max() * N > kappa:
        if n_iter == MAX_FLATTEN_ITERS:
            log.debug("flattening hit the iteration cap (max*N=%r)", p.max() * N)
            break
        s = np.sqrt(p)
        new = s / s.sum()
        n_iter += 1
        change = np.abs(new - p).max()
        p = new
        if change < FLATTEN_TOL:
            break
    if return_iterations:
        return p, n_iter
    return p


def importance_coefficients(probs) -> np.ndarray:
    """``r_i = (1/M) / p_i``: the reweighting that keeps estimates unbiased."""
    p = check_probability_vector(probs)
    return (1.0 / p.size) / p


@dataclass(frozen=True)
class SamplingPlan:
    probs: np.ndarray
    coefficients: np.ndarray

    @classmethod
    def from_probs(cls, probs) -> "SamplingPlan":
        p = check_probability_vector(probs)
        return cls(p, importance_coefficients(p))

    @classmethod
    def from_weights(cls, weights) -> "SamplingPlan":
        return cls.from_probs(normalize_weights(weights))

    @classmethod
    def uniform(cls, M: int) -> "SamplingPlan":
        return cls(np.full(M, 1.0 / M), np.ones(M))

    @property
    def size(self) -> int:
        return self.probs.size


def sample_with_replacement(probs, N: int, rng: np.random.Generator) -> np.ndarray:
    """``N`` i.i.d. indices drawn from ``probs`` by inverting the CDF."""
    p = np.asarray(probs, dtype=np.float64)
    if N < 1:
        raise ValueError("N must be >= 1")
    cdf = np.cumsum(p)
    u = rng.random(N) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    # u < cdf[-1] always, but guard against round-off at the top end
    return np.minimum(idx, p.size - 1)


def sample_uniform(M: int, N: int, rng: np.random.Generator) -> np.ndarray:
    if M < 1 or N < 1:
        raise ValueError("M and N must be >= 1")
    return rng.integers(0, M, size=N)


class EpochScanState:
    """Uniform sampling without replacement, one shuffled pass per epoch.

    A batch that runs past the end of the current permutation takes the
    remaining indices, reshuffles, and fills up from the new epoch.
    """

    def __init__(self, M: int, rng: np.random.Generator):
        if M < 1:
            raise ValueError("M must be >= 1")
        self.M = M
        self.rng = rng
        self.permutation = rng.permutation(M)
        self.cursor = 0
        self.epoch = 0

    def _reshuffle(self):
        self.permutation = self.rng.permutation(self.M)
        self.cursor = 0
        self.epoch += 1

    def next_batch(self, N: int) -> np.ndarray:
        if N < 1:
            raise ValueError("N must be >= 1")
        if N > self.M:
            raise ValueError(f"scan batch size {N} exceeds dataset size {self.M}")
        if self.cursor == self.M:
            self._reshuffle()
        take = min(N, self.M - self.cursor)
        out = self.permutation[self.cursor:self.cursor + take]
        self.cursor += take
        if take < N:
            self._reshuffle()
            rest = self.permutation[:N - take]
            self.cursor = N - take
            out = np.concatenate([out, rest])
        return out.copy()


def sample_scan(state: EpochScanState, N: int) -> np.ndarray:
    return state.next_batch(N)
