"""Minibatch estimates of gradient-covariance traces and what follows from them.

From one minibatch drawn under an importance-sampling proposal (per-sample
gradients ``g_k`` with coefficients ``r_k``), three traces are estimated:

* ``phi_is``    -- covariance trace of ``r g`` under the proposal in use,
* ``phi_unif``  -- covariance trace of ``g`` under uniform sampling,
* ``phi_ideal`` -- covariance trace under the norm-proportional optimum.

Their ratios give the effective minibatch size, the adjusted learning rate
and the efficiency score.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

log = logging.getLogger(__name__)

PHI_FLOOR = 1e-30
SCORE_FLOOR = 1e-30
#: default clamp on N_ems / N
NEMS_CLAMP = (1.0 / 16.0, 16.0)
#: default EMA decay for the N_ems that drives the learning rate
NEMS_SMOOTHING = 0.9


@dataclass(frozen=True)
class TraceEstimates:
    phi_is: float
    phi_unif: float
    phi_ideal: float
    mu_norm_sq: float
    space: str = "logit"

    def as_dict(self):
        return asdict(self)


def estimate_traces(grads, coeffs, space: str = "logit") -> TraceEstimates:
    """Plug-in estimates of the three covariance traces from one minibatch.

    Parameters
    ----------
    grads : array, shape (N, D)
        Per-sample gradients of the sampled points (parameter or logit space).
    coeffs : array, shape (N,)
        Importance coefficients ``r_k = (1/M) / p_k`` of the sampled points.
    """
    G = np.asarray(grads, dtype=np.float64)
    r = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if G.ndim != 2:
        raise ValueError("grads must be a 2-D (batch, dim) array")
    if G.shape[0] < 2:
        raise ValueError("need at least two samples to estimate a variance")
    if r.shape != (G.shape[0],):
        raise ValueError("need one coefficient per gradient")
    if np.any(r <= 0):
        raise ValueError("coefficients must be positive")
    rG = r[:, None] * G
    mu = rG.mean(axis=0)
    mu2 = float(mu @ mu)
    sq_norms = np.einsum("ij,ij->i", G, G)
    phi_is = float((r * r * sq_norms).mean()) - mu2
    phi_unif = float((r * sq_norms).mean()) - mu2
    phi_ideal = float((r * np.sqrt(sq_norms)).mean()) ** 2 - mu2
    return TraceEstimates(phi_is, phi_unif, phi_ideal, mu2, space)


def nems_ratio(est: TraceEstimates, clamp=NEMS_CLAMP):
    """``phi_unif / phi_is`` and whether the estimate was degenerate.

    A non-positive ``phi_is`` gives the clamp ceiling (or ``inf`` without a
    clamp) and ``degenerate=True``.
    """
    lo, hi = clamp if clamp is not None else (0.0, math.inf)
    if est.phi_is <= PHI_FLOOR:
        log.debug("phi_is=%r at or below floor; N_ems ratio set to %r", est.phi_is, hi)
        return hi, True
    ratio = est.phi_unif / max(est.phi_is, PHI_FLOOR)
    degenerate = ratio <= 0
    return min(max(ratio, lo), hi), degenerate


def effective_minibatch_size(est: TraceEstimates, N: int, clamp=NEMS_CLAMP) -> float:
    """Uniform-sampling batch size whose gradient noise matches this batch's."""
    return nems_ratio(est, clamp)[0] * N


def lr_scale(nems: float, N: int, optimizer: str) -> float:
    ratio = nems / N
    if optimizer == "adam":
        return math.sqrt(ratio)
    if optimizer == "sgd":
        return ratio
    raise ValueError(f"unknown optimizer {optimizer!r}")


def adjusted_learning_rate(est: TraceEstimates, N: int, eps: float, optimizer: str = "sgd",
                           clamp=NEMS_CLAMP) -> float:
    """Learning rate rescaled by ``N_ems / N`` (SGD) or its square root (Adam)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return lr_scale(effective_minibatch_size(est, N, clamp), N, optimizer) * eps


def efficiency_score(est: TraceEstimates) -> float | None:
    """``(phi_is - phi_ideal) / (phi_unif - phi_ideal)``; ``None`` if undefined.

    0 means the proposal is as good as the optimum, 1 means no better than
    uniform sampling.
    """
    denom = est.phi_unif - est.phi_ideal
    if denom <= SCORE_FLOOR:
        log.debug("S(W) undefined: phi_unif - phi_ideal = %r", denom)
        return None
    return (est.phi_is - est.phi_ideal) / denom


class NemsSmoother:
    """Exponential smoothing of per-iteration N_ems estimates.

    ``decay=None`` disables smoothing (the raw value passes through).
    """

    def __init__(self, initial: float, decay: float | None = NEMS_SMOOTHING):
        if decay is not None and not 0.0 <= decay < 1.0:
            raise ValueError("decay must be in [0, 1)")
        self.decay = decay
        self.value = float(initial)

    def update(self, raw: float) -> float:
        if self.decay is None:
            self.value = float(raw)
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * raw
        return self.value
