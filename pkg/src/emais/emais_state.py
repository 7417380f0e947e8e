"""Per-sample moving statistics of gradient norms and importance weights.

Each sample keeps an exponential moving mean and variance of its gradient
norm. Samples are observed at irregular iterations (only when they land in
a minibatch), so the decay applied at each update depends on how long ago
the sample was last seen: ``alpha = exp(-(t - t_prev) / tau)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .nn_core import forward, logit_gradients

#: weights are floored at this fraction of the largest weight
IMPORTANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class TauMode:
    """Time constant of the moving statistics: fixed, or equal to ``t``."""

    kind: str = "linear"
    tau: float | None = None

    def __post_init__(self):
        if self.kind == "fixed":
            if self.tau is None or not self.tau > 0:
                raise ValueError("fixed tau must be positive")
        elif self.kind != "linear":
            raise ValueError(f"unknown tau mode {self.kind!r}")

    @classmethod
    def fixed(cls, tau: float) -> "TauMode":
        return cls("fixed", float(tau))

    @classmethod
    def linear(cls) -> "TauMode":
        return cls("linear")

    @classmethod
    def parse(cls, value) -> "TauMode":
        """``"linear"`` or a positive number."""
        if isinstance(value, TauMode):
            return value
        if isinstance(value, str) and value.strip().lower() == "linear":
            return cls.linear()
        return cls.fixed(float(value))

    def to_config(self):
        return "linear" if self.kind == "linear" else self.tau


def effective_tau(mode: TauMode, t: int) -> float:
    if mode.kind == "fixed":
        return mode.tau
    # t = 0 never occurs after warmup; treat it as t = 1
    return float(max(t, 1))


class InitializationError(RuntimeError):
    pass


class ImportanceState:
    def __init__(self, M: int, tau_mode: TauMode | None = None):
        if M < 1:
            raise ValueError("M must be >= 1")
        self.M = M
        self.tau_mode = tau_mode or TauMode.linear()
        self.mu_hat = np.zeros(M)
        self.sigma2_hat = np.zeros(M)
        self.t_prev = np.zeros(M, dtype=np.int64)
        self.initialized = False

    def copy(self) -> "ImportanceState":
        other = ImportanceState(self.M, self.tau_mode)
        other.mu_hat = self.mu_hat.copy()
        other.sigma2_hat = self.sigma2_hat.copy()
        other.t_prev = self.t_prev.copy()
        other.initialized = self.initialized
        return other

    def update_stats(self, i: int, t: int, g: float) -> None:
        """Fold one gradient-norm observation for sample ``i`` at iteration ``t``."""
        if not math.isfinite(g) or g < 0:
            raise FloatingPointError(f"gradient norm must be finite and >= 0, got {g!r}")
        if t < self.t_prev[i]:
            raise ValueError(
                f"sample {i}: iteration {t} precedes last update at {self.t_prev[i]}"
            )
        # shares the vectorised arithmetic so both paths agree bit for bit
        self.update_many([i], t, [g])

    def update_many(self, indices, t: int, norms) -> None:
        """Vectorised :meth:`update_stats` for one minibatch at iteration ``t``.

        Processing in batch order, a repeated index sees ``t - t_prev = 0``
        (alpha = 1) and leaves the state untouched, so only the first
        occurrence of each index matters.
        """
        idx = np.asarray(indices, dtype=np.int64)
        g = np.asarray(norms, dtype=np.float64)
        if idx.shape != g.shape:
            raise ValueError("indices and norms differ in length")
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise FloatingPointError("gradient norms must be finite and >= 0")
        idx, first = np.unique(idx, return_index=True)
        g = g[first]
        if np.any(t < self.t_prev[idx]):
            raise ValueError(f"iteration {t} precedes a previous update")
        alpha = np.exp(-(t - self.t_prev[idx]) / effective_tau(self.tau_mode, t))
        delta = g - self.mu_hat[idx]
        self.mu_hat[idx] += (1.0 - alpha) * delta
        self.sigma2_hat[idx] = alpha * (self.sigma2_hat[idx] + (1.0 - alpha) * delta * delta)
        self.t_prev[idx] = t

    def compute_importance(self) -> np.ndarray:
        """``w_i = mu_i + sqrt(sigma2_i)``, floored to stay strictly positive."""
        if not self.initialized:
            raise InitializationError("moving statistics have not been initialised")
        w = self.mu_hat + np.sqrt(self.sigma2_hat)
        floor = max(IMPORTANCE_FLOOR * w.max(), np.finfo(np.float64).tiny)
        return np.maximum(w, floor)

    def warmup_ingest(self, indices, iterations, norms) -> None:
        """Initialise from the observations of two uniform scan epochs.

        ``indices``, ``iterations`` and ``norms`` are parallel sequences in
        observation order. Each sample uses its first two observations: the
        mean becomes their average, the variance the unbiased two-point
        estimate ``(g1 - g2)**2 / 2``, and ``t_prev`` the iteration of the
        second.
        """
        idx = np.asarray(indices, dtype=np.int64)
        its = np.asarray(iterations, dtype=np.int64)
        g = np.asarray(norms, dtype=np.float64)
        if not (idx.shape == its.shape == g.shape):
            raise ValueError("warmup observation arrays differ in length")
        first = np.full(self.M, np.nan)
        second = np.full(self.M, np.nan)
        t_second = np.zeros(self.M, dtype=np.int64)
        seen = np.zeros(self.M, dtype=np.int64)
        for i, t, v in zip(idx, its, g):
            if seen[i] == 0:
                first[i] = v
            elif seen[i] == 1:
                second[i] = v
                t_second[i] = t
            seen[i] += 1
        missing = np.flatnonzero(seen < 2)
        if missing.size:
            raise InitializationError(
                f"{missing.size} samples were observed fewer than twice during warmup "
                f"(first: {missing[:5].tolist()})"
            )
        self.mu_hat = 0.5 * (first + second)
        self.sigma2_hat = 0.5 * (first - second) ** 2
        self.t_prev = t_second
        self.initialized = True

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "mu", "sigma2", "t_prev"])
            for i in range(self.M):
                w.writerow([i, repr(float(self.mu_hat[i])),
                            repr(float(self.sigma2_hat[i])), int(self.t_prev[i])])

    @classmethod
    def from_csv(cls, path, tau_mode: TauMode | None = None) -> "ImportanceState":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["i", "mu", "sigma2", "t_prev"]:
            raise ValueError(f"{path}: expected header i,mu,sigma2,t_prev")
        body = rows[1:]
        state = cls(len(body), tau_mode)
        for lineno, row in enumerate(body, start=2):
            try:
                i = int(row[0])
                state.mu_hat[i] = float(row[1])
                state.sigma2_hat[i] = float(row[2])
                state.t_prev[i] = int(row[3])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: bad state row {row!r}") from exc
        state.initialized = True
        return state


def refresh_all(state: ImportanceState, params, X, labels, loss, t: int,
                chunk: int = 4096) -> None:
    """Update every sample's statistics from the current (frozen) model.

    Uses logit-gradient norms; parameters are not touched.
    """
    M = state.M
    for start in range(0, M, chunk):
        sl = slice(start, min(start + chunk, M))
        Z = forward(params, X[sl])
        _, dZ = logit_gradients(Z, labels[sl], loss)
        state.update_many(np.arange(sl.start, sl.stop), t, np.linalg.norm(dZ, axis=1))
