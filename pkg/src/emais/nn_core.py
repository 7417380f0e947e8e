"""Dense feed-forward classifier with exact per-sample gradients.

Parameters live in one flat float64 vector so that per-sample gradients,
optimizer moments and finite-difference checks all share a single layout:
for each layer, the ``fan_in x fan_out`` weight matrix (row-major) followed
by the ``fan_out`` bias vector. Hidden layers use ``tanh``; the last layer
is linear and produces the logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "LossKind",
    "ModelParams",
    "OptimizerState",
    "init_params",
    "forward",
    "per_sample_loss",
    "per_sample_logit_gradient",
    "logit_gradients",
    "per_sample_param_gradient",
    "per_sample_param_gradients",
    "weighted_minibatch_gradient",
    "optimizer_step",
    "cosine_lr",
]


class LossKind(str, Enum):
    SOFTMAX_CE = "softmax_ce"
    BCE = "bce"


def _n_params(layer_shapes):
    return sum(fi * fo + fo for fi, fo in layer_shapes)


@dataclass
class ModelParams:
    layer_shapes: list[tuple[int, int]]
    values: np.ndarray

    def __post_init__(self):
        self.layer_shapes = [(int(a), int(b)) for a, b in self.layer_shapes]
        for (_, fo), (fi, _) in zip(self.layer_shapes[:-1], self.layer_shapes[1:]):
            if fo != fi:
                raise ValueError(f"layer shapes do not chain: {self.layer_shapes}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (_n_params(self.layer_shapes),):
            raise ValueError(
                f"expected {_n_params(self.layer_shapes)} parameters, "
                f"got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("non-finite parameter values")

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def n_inputs(self) -> int:
        return self.layer_shapes[0][0]

    @property
    def n_outputs(self) -> int:
        return self.layer_shapes[-1][1]

    def layers(self, values=None):
        """Return ``[(W, b), ...]`` as views into ``values`` (default: own)."""
        v = self.values if values is None else values
        out = []
        pos = 0
        for fi, fo in self.layer_shapes:
            W = v[pos:pos + fi * fo].reshape(fi, fo)
            pos += fi * fo
            b = v[pos:pos + fo]
            pos += fo
            out.append((W, b))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(list(self.layer_shapes), self.values.copy())


def init_params(layer_shapes, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    chunks = []
    for fi, fo in layer_shapes:
        limit = math.sqrt(6.0 / (fi + fo))
        chunks.append(rng.uniform(-limit, limit, size=fi * fo))
        chunks.append(np.zeros(fo))
    return ModelParams(list(layer_shapes), np.concatenate(chunks))


def _as_batch(params: ModelParams, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.n_inputs:
        raise ValueError(
            f"input has shape {x.shape}, network expects {params.n_inputs} features"
        )
    return X, single


def _forward_cache(params: ModelParams, X):
    # activations[k] is the input to layer k; the last entry is the logits
    acts = [X]
    layers = params.layers()
    h = X
    for k, (W, b) in enumerate(layers):
        z = h @ W + b
        h = np.tanh(z) if k < len(layers) - 1 else z
        acts.append(h)
    return acts


def forward(params: ModelParams, x) -> np.ndarray:
    """Logits for one feature vector (1-D) or a batch of rows (2-D)."""
    X, single = _as_batch(params, x)
    z = _forward_cache(params, X)[-1]
    return z[0] if single else z


def _labels_for(loss: LossKind, labels, n_rows, n_out):
    loss = LossKind(loss)
    if loss is LossKind.SOFTMAX_CE:
        y = np.asarray(labels).reshape(-1)
        if y.shape != (n_rows,):
            raise ValueError("softmax cross-entropy needs one class index per row")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.mod(y, 1) == 0):
                raise ValueError("class labels must be integers")
            y = y.astype(np.int64)
        if np.any(y < 0) or np.any(y >= n_out):
            raise ValueError(f"class label out of range [0, {n_out})")
        return y
    Y = np.asarray(labels, dtype=np.float64).reshape(n_rows, -1)
    if Y.shape[1] != n_out:
        raise ValueError(f"binary label rows must have {n_out} entries")
    if not np.all((Y == 0) | (Y == 1)):
        raise ValueError("binary labels must be 0 or 1")
    return Y


def _check_logits(Z):
    if not np.all(np.isfinite(Z)):
        raise FloatingPointError("non-finite logits")


def _softmax(Z):
    shifted = Z - Z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True), shifted


def _sigmoid(Z):
    # split on sign so exp never overflows
    out = np.empty_like(Z)
    pos = Z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-Z[pos]))
    ez = np.exp(Z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _loss_and_dz(Z, y, loss: LossKind):
    if loss is LossKind.SOFTMAX_CE:
        P, shifted = _softmax(Z)
        logsum = np.log(np.exp(shifted).sum(axis=1))
        rows = np.arange(Z.shape[0])
        losses = logsum - shifted[rows, y]
        dZ = P
        dZ[rows, y] -= 1.0
        return losses, dZ
    # log(1 + exp(z)) - y z, written with logaddexp for stability
    losses = (np.logaddexp(0.0, Z) - y * Z).sum(axis=1)
    return losses, _sigmoid(Z) - y


def per_sample_loss(logits, labels, loss: LossKind) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    _check_logits(Z)
    y = _labels_for(loss, labels, Z.shape[0], Z.shape[1])
    return _loss_and_dz(Z, y, LossKind(loss))[0]


def logit_gradients(logits, labels, loss: LossKind):
    """Per-row losses and loss gradients with respect to the logits.

    Returns ``(losses, dZ)`` with ``dZ`` the same shape as ``logits`` (2-D).
    """
    Z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    _check_logits(Z)
    y = _labels_for(loss, labels, Z.shape[0], Z.shape[1])
    return _loss_and_dz(Z, y, LossKind(loss))


def per_sample_logit_gradient(logits, label, loss: LossKind) -> np.ndarray:
    """Gradient of the loss with respect to one logit vector.

    ``softmax(z) - onehot(y)`` for softmax cross-entropy and
    ``sigmoid(z) - y`` for binary cross-entropy.
    """
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    label = [label] if LossKind(loss) is LossKind.SOFTMAX_CE else np.reshape(label, (1, -1))
    return logit_gradients(z[None, :], label, loss)[1][0]


def _backward(params: ModelParams, acts, dZ, per_sample: bool):
    """Back-propagate ``dZ`` (rows = samples) through the cached forward pass.

    With ``per_sample`` the result has one gradient row per sample, otherwise
    the rows are summed into a single vector.
    """
    B = dZ.shape[0]
    layers = params.layers()
    out = np.empty((B, params.size)) if per_sample else np.empty(params.size)
    grads = out if per_sample else out[None, :]
    offsets = []
    pos = 0
    for fi, fo in params.layer_shapes:
        offsets.append(pos)
        pos += fi * fo + fo
    delta = dZ
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        a_in = acts[k]
        fi, fo = params.layer_shapes[k]
        start = offsets[k]
        if per_sample:
            gW = (a_in[:, :, None] * delta[:, None, :]).reshape(B, fi * fo)
            grads[:, start:start + fi * fo] = gW
            grads[:, start + fi * fo:start + fi * fo + fo] = delta
        else:
            grads[0, start:start + fi * fo] = (a_in.T @ delta).reshape(-1)
            grads[0, start + fi * fo:start + fi * fo + fo] = delta.sum(axis=0)
        if k > 0:
            # acts[k] = tanh(pre-activation), so tanh' = 1 - acts[k]**2
            delta = (delta @ W.T) * (1.0 - a_in * a_in)
    return out


def per_sample_param_gradients(params: ModelParams, X, labels, loss: LossKind):
    """Per-sample losses, logit gradients and parameter gradients for a batch.

    Returns ``(losses, dZ, G)`` where ``G`` has shape ``(batch, K)``.
    """
    X, _ = _as_batch(params, X)
    acts = _forward_cache(params, X)
    losses, dZ = logit_gradients(acts[-1], labels, loss)
    return losses, dZ, _backward(params, acts, dZ, per_sample=True)


def per_sample_param_gradient(params: ModelParams, x, label, loss: LossKind):
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    label = [label] if LossKind(loss) is LossKind.SOFTMAX_CE else np.reshape(label, (1, -1))
    return per_sample_param_gradients(params, x, label, loss)[2][0]


def weighted_minibatch_gradient(params: ModelParams, X, labels, coeffs, loss: LossKind,
                                return_logit_grads: bool = False):
    """Mean of ``r_k * loss_k`` over the batch and its parameter gradient.

    One forward pass yields the per-sample losses and logit gradients; the
    latter are returned on request so callers can reuse them.
    """
    X, _ = _as_batch(params, X)
    r = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if X.shape[0] == 0:
        raise ValueError("empty minibatch")
    if r.shape != (X.shape[0],):
        raise ValueError("need one coefficient per sample")
    if np.any(r <= 0):
        raise ValueError("coefficients must be positive")
    acts = _forward_cache(params, X)
    losses, dZ = logit_gradients(acts[-1], labels, loss)
    n = X.shape[0]
    value = float(np.dot(r, losses) / n)
    grad = _backward(params, acts, dZ * (r / n)[:, None], per_sample=False)
    if return_logit_grads:
        return value, grad, losses, dZ
    return value, grad


@dataclass
class OptimizerState:
    kind: str = "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")

    @classmethod
    def create(cls, kind: str, n_params: int, **kwargs) -> "OptimizerState":
        state = cls(kind=kind, **kwargs)
        if kind == "adam":
            state.m = np.zeros(n_params)
            state.v = np.zeros(n_params)
        return state


def optimizer_step(state: OptimizerState, params: ModelParams, gradient, lr: float):
    """Apply one update in place and return ``params``.

    A non-finite gradient raises before anything is modified.
    """
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != params.values.shape:
        raise ValueError("gradient length does not match parameters")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    if state.kind == "sgd":
        params.values -= lr * g
        return params
    if state.m is None:
        state.m = np.zeros_like(g)
        state.v = np.zeros_like(g)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    params.values -= lr * m_hat / (np.sqrt(v_hat) + state.delta)
    return params


def cosine_lr(t: int, T: int, eps0: float) -> float:
    """Cosine decay from ``eps0`` at ``t = 0`` to exactly zero at ``t = T``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if t < 0 or t > T:
        raise ValueError(f"iteration {t} outside [0, {T}]")
    if t == T:
        return 0.0
    return eps0 * 0.5 * (1.0 + math.cos(math.pi * t / T))
