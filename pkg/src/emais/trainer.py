"""Training loops: importance-sampled (EMAIS), uniform baselines, and N_ems replay.

Every loop produces a :class:`TrainLog` with exactly ``T`` per-iteration
records. Quantities that do not apply to a method (traces, N_ems, S(W) for
uniform training) are stored as ``None`` and serialise as JSON ``null``.
"""

from __future__ import annotations

import json
import logging
import math
import zlib
from dataclasses import dataclass, field, fields

import numpy as np

from .data import Dataset
from .emais_state import ImportanceState, TauMode, refresh_all
from .nn_core import (
    LossKind,
    ModelParams,
    OptimizerState,
    cosine_lr,
    forward,
    init_params,
    optimizer_step,
    per_sample_loss,
    weighted_minibatch_gradient,
)
from .sampling import (
    EpochScanState,
    adjust_probabilities,
    importance_coefficients,
    sample_uniform,
    sample_with_replacement,
)
from .variance_metrics import (
    NEMS_CLAMP,
    NemsSmoother,
    efficiency_score,
    estimate_traces,
    lr_scale,
    nems_ratio,
)

log = logging.getLogger(__name__)

METHODS = ("emais", "scan", "uni", "uni-dynamic")


class ConfigError(ValueError):
    pass


class TrainingAborted(FloatingPointError):
    """Raised on a non-finite loss; ``log`` holds every completed iteration."""

    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


def derive_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator per named stream, all derived from one seed."""
    return np.random.default_rng([int(seed), zlib.crc32(label.encode())])


@dataclass
class TrainConfig:
    method: str = "emais"
    hidden: list = field(default_factory=lambda: [64, 64])
    optimizer: str = "sgd"
    eps0: float = 0.05
    T: int = 5000
    N: int = 128
    tau: object = "linear"
    kappa: float = 1.0
    lr_adjust: bool = True
    nems_clamp: bool = True
    nems_smoothing: float | None = 0.9
    refresh_interval: int | None = None
    eval_interval: int | None = 500
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        self.hidden = [int(h) for h in self.hidden]
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer widths must be >= 1")
        if not self.eps0 > 0:
            raise ConfigError("eps0 must be positive")
        if self.T < 1 or self.N < 1:
            raise ConfigError("T and N must be >= 1")
        if not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        try:
            self.tau_mode = TauMode.parse(self.tau)
        except ValueError as exc:
            raise ConfigError(f"bad tau: {exc}") from None
        if self.nems_smoothing is not None and not 0 <= self.nems_smoothing < 1:
            raise ConfigError("nems_smoothing must be in [0, 1) or null")
        if self.refresh_interval is not None and self.refresh_interval < 1:
            raise ConfigError("refresh_interval must be >= 1")
        if self.eval_interval is not None and self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def layer_shapes(self, n_in: int, n_out: int):
        widths = [n_in] + self.hidden + [n_out]
        return list(zip(widths[:-1], widths[1:]))

    def validate_for(self, train: Dataset):
        M = train.M
        if self.method == "emais":
            if self.T < warmup_iterations(M, self.N):
                raise ConfigError(
                    f"T={self.T} is shorter than the warmup ({warmup_iterations(M, self.N)})"
                )
            if M * self.kappa < self.N:
                raise ConfigError("M * kappa < N: flattening cannot meet the duplicate budget")
        if self.method == "scan" and self.N > M:
            raise ConfigError(f"scan needs N <= M (N={self.N}, M={M})")


def warmup_iterations(M: int, N: int) -> int:
    """Iterations for two uniform scan epochs; a partial last batch counts."""
    return math.ceil(2 * M / N)


class TrainLog:
    def __init__(self, header: dict):
        self.header = header
        self.records: list[dict] = []
        self.summary: dict = {}

    def append(self, record: dict):
        if self.records and record["t"] <= self.records[-1]["t"]:
            raise ValueError("log records must have increasing t")
        self.records.append(record)

    def column(self, key):
        return [r.get(key) for r in self.records]

    def lines(self):
        yield json.dumps({"type": "header", **self.header})
        for r in self.records:
            yield json.dumps({"type": "iter", **r})
        if self.summary:
            yield json.dumps({"type": "summary", **self.summary})

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "TrainLog":
        out = None
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                kind = rec.pop("type", None)
                if kind == "header":
                    out = cls(rec)
                elif out is None:
                    raise ValueError(f"{path}:{lineno}: record before header")
                elif kind == "iter":
                    out.append(rec)
                elif kind == "summary":
                    out.summary = rec
        if out is None:
            raise ValueError(f"{path}: no header record")
        return out


def average_precision(scores, targets) -> float:
    """Mean of the precision measured at the rank of each positive item."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    order = np.argsort(-scores, kind="stable")
    hits = targets[order] > 0
    if not hits.any():
        raise ValueError("average precision undefined without positives")
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, ranks.size + 1) / ranks))


def evaluate(params: ModelParams, dataset: Dataset) -> dict:
    """Classification error in percent, or mAP for multi-label data."""
    if dataset.M == 0:
        raise ValueError("empty evaluation set")
    Z = forward(params, dataset.features)
    if dataset.multilabel:
        aps = [average_precision(Z[:, c], dataset.labels[:, c])
               for c in range(dataset.n_classes) if dataset.labels[:, c].any()]
        return {"mAP": float(np.mean(aps))}
    wrong = np.argmax(Z, axis=1) != dataset.labels
    return {"error": float(100.0 * wrong.mean())}


def full_loss(params: ModelParams, dataset: Dataset) -> float:
    Z = forward(params, dataset.features)
    return float(per_sample_loss(Z, dataset.labels, dataset.loss).mean())


def _header(config: TrainConfig, train: Dataset, shapes, extra=None):
    h = {
        "config": config.to_dict(),
        "seed": config.seed,
        "M": train.M,
        "loss": train.loss,
        "layer_shapes": [list(s) for s in shapes],
    }
    if extra:
        h.update(extra)
    return h


class _Run:
    """State shared by all loops: model, optimizer, datasets, log."""

    def __init__(self, config: TrainConfig, train: Dataset, test: Dataset | None,
                 header_extra=None):
        config.validate_for(train)
        self.config = config
        self.train = train
        self.test = test
        self.loss = LossKind(train.loss)
        shapes = config.layer_shapes(train.dim, train.n_classes)
        self.params = init_params(shapes, derive_rng(config.seed, "init"))
        self.opt = OptimizerState.create(config.optimizer, self.params.size)
        self.rng = derive_rng(config.seed, "sampling")
        self.log = TrainLog(_header(config, train, shapes, header_extra))

    def step(self, t, idx, coeffs, lr):
        X, y = self.train.features[idx], self.train.labels[idx]
        try:
            value, grad, losses, dZ = weighted_minibatch_gradient(
                self.params, X, y, coeffs, self.loss, return_logit_grads=True)
        except FloatingPointError as exc:
            raise TrainingAborted(f"iteration {t}: {exc}", self.log) from exc
        if not math.isfinite(value) or not np.all(np.isfinite(grad)):
            raise TrainingAborted(f"iteration {t}: non-finite loss {value!r}", self.log)
        if lr > 0:
            optimizer_step(self.opt, self.params, grad, lr)
        return value, dZ

    def maybe_eval(self, t, record):
        c = self.config
        due = t == c.T or (c.eval_interval is not None and t % c.eval_interval == 0)
        if due and self.test is not None:
            record.update(evaluate(self.params, self.test))

    def finish(self):
        summary = {"final_train_loss": full_loss(self.params, self.train)}
        if self.test is not None:
            summary.update({f"final_{k}": v for k, v in evaluate(self.params, self.test).items()})
        s_vals = [r["s_w"] for r in self.log.records
                  if r.get("phase") == "is" and r.get("s_w") is not None]
        summary["mean_S_W"] = float(np.mean(s_vals)) if s_vals else None
        nems = [r["nems"] for r in self.log.records if r.get("phase") == "is"]
        summary["mean_nems"] = float(np.mean(nems)) if nems else None
        self.log.summary = summary
        return self.params, self.log


def _record(t, phase, lr, scaled_lr, loss, batch_size, est=None, nems_raw=None,
            nems=None, s_w=None, degenerate=False):
    rec = {
        "t": t,
        "phase": phase,
        "lr": lr,
        "scaled_lr": scaled_lr,
        "loss": loss,
        "batch_size": batch_size,
        "phi_is": None if est is None else est.phi_is,
        "phi_unif": None if est is None else est.phi_unif,
        "phi_ideal": None if est is None else est.phi_ideal,
        "nems_raw": nems_raw,
        "nems": nems,
        "s_w": s_w,
    }
    if degenerate:
        rec["nems_degenerate"] = True
    return rec


def train_emais(config: TrainConfig, train: Dataset, test: Dataset | None = None):
    """Importance-sampled training with online variance tracking.

    Two uniform scan epochs initialise the per-sample statistics; after that
    every minibatch is drawn from the flattened importance distribution and
    the step uses ``r``-weighted losses. With ``lr_adjust`` the cosine
    learning rate is rescaled by the (smoothed, clamped) N_ems.
    """
    c = config
    M, N = train.M, c.N
    run = _Run(c, train, test, {"warmup_iterations": warmup_iterations(M, N)})
    t_warm = warmup_iterations(M, N)
    state = ImportanceState(M, c.tau_mode)
    scan = EpochScanState(M, run.rng)
    obs_idx, obs_t, obs_g = [], [], []
    for t in range(1, t_warm + 1):
        n = N if t < t_warm else 2 * M - (t_warm - 1) * N
        idx = scan.next_batch(n)
        lr = cosine_lr(t, c.T, c.eps0)
        value, dZ = run.step(t, idx, np.ones(n), lr)
        obs_idx.append(idx)
        obs_t.append(np.full(n, t))
        obs_g.append(np.linalg.norm(dZ, axis=1))
        rec = _record(t, "warmup", lr, lr, value, n, nems=float(N))
        run.maybe_eval(t, rec)
        run.log.append(rec)
    state.warmup_ingest(np.concatenate(obs_idx), np.concatenate(obs_t), np.concatenate(obs_g))

    clamp = NEMS_CLAMP if c.nems_clamp else None
    smoother = NemsSmoother(float(N), c.nems_smoothing)
    X, Y = train.features, train.labels
    for t in range(t_warm + 1, c.T + 1):
        if c.refresh_interval and t % c.refresh_interval == 0:
            refresh_all(state, run.params, X, Y, run.loss, t)
        probs = adjust_probabilities(state.compute_importance(), N, c.kappa)
        r_all = importance_coefficients(probs)
        idx = sample_with_replacement(probs, N, run.rng)
        r = r_all[idx]
        base_lr = cosine_lr(t, c.T, c.eps0)
        # the forward pass is at the current parameters, so computing the
        # step's gradient first and folding the norms in afterwards is the
        # same as the reverse order
        try:
            value, grad, _, dZ = weighted_minibatch_gradient(
                run.params, X[idx], Y[idx], r, run.loss, return_logit_grads=True)
        except FloatingPointError as exc:
            raise TrainingAborted(f"iteration {t}: {exc}", run.log) from exc
        if not math.isfinite(value) or not np.all(np.isfinite(grad)):
            raise TrainingAborted(f"iteration {t}: non-finite loss {value!r}", run.log)
        state.update_many(idx, t, np.linalg.norm(dZ, axis=1))
        est = estimate_traces(dZ, r, "logit")
        ratio, degenerate = nems_ratio(est, clamp)
        nems_raw = ratio * N
        nems = smoother.update(nems_raw)
        scale = lr_scale(nems, N, c.optimizer)
        lr = base_lr * scale if c.lr_adjust else base_lr
        if lr > 0:
            optimizer_step(run.opt, run.params, grad, lr)
        rec = _record(t, "is", lr, lr / scale, value, N, est, nems_raw, nems,
                      efficiency_score(est), degenerate)
        run.maybe_eval(t, rec)
        run.log.append(rec)
    params, tlog = run.finish()
    return params, tlog, state


def train_uniform(config: TrainConfig, train: Dataset, test: Dataset | None = None,
                  variant: str | None = None):
    """SGD-Scan (without replacement) or SGD-Uni (with replacement)."""
    c = config
    variant = variant or c.method
    if variant not in ("scan", "uni"):
        raise ConfigError(f"uniform variant must be 'scan' or 'uni', got {variant!r}")
    run = _Run(c, train, test)
    scan = EpochScanState(train.M, run.rng) if variant == "scan" else None
    ones = np.ones(c.N)
    for t in range(1, c.T + 1):
        idx = scan.next_batch(c.N) if scan else sample_uniform(train.M, c.N, run.rng)
        lr = cosine_lr(t, c.T, c.eps0)
        value, _ = run.step(t, idx, ones, lr)
        rec = _record(t, variant, lr, lr, value, c.N)
        run.maybe_eval(t, rec)
        run.log.append(rec)
    return run.finish()


def train_uniform_dynamic(config: TrainConfig, train: Dataset, schedule,
                          test: Dataset | None = None):
    """SGD-Uni whose batch size at iteration ``t`` follows ``schedule[t-1]``.

    The batch holds ``round(schedule[t-1])`` (at least 1) uniform draws and
    the learning rate is rescaled by ``schedule[t-1] / N`` exactly as the
    importance-sampled run would rescale it.
    """
    c = config
    sched = np.asarray(schedule, dtype=np.float64)
    if sched.shape != (c.T,):
        raise ConfigError(f"schedule has {sched.size} entries, expected T={c.T}")
    if np.any(sched < 1) or not np.all(np.isfinite(sched)):
        raise ConfigError("schedule entries must be finite and >= 1")
    run = _Run(c, train, test)
    for t in range(1, c.T + 1):
        s = float(sched[t - 1])
        n = max(1, int(round(s)))
        idx = sample_uniform(train.M, n, run.rng)
        scale = lr_scale(s, c.N, c.optimizer)
        lr = cosine_lr(t, c.T, c.eps0) * scale
        value, _ = run.step(t, idx, np.ones(n), lr)
        rec = _record(t, "uni-dynamic", lr, lr / scale, value, n, nems=s)
        run.maybe_eval(t, rec)
        run.log.append(rec)
    return run.finish()


def train(config: TrainConfig, train_set: Dataset, test_set: Dataset | None = None,
          schedule=None):
    """Dispatch on ``config.method``; returns ``(params, log, state_or_None)``."""
    if config.method == "emais":
        return train_emais(config, train_set, test_set)
    if config.method == "uni-dynamic":
        if schedule is None:
            raise ConfigError("uni-dynamic needs an N_ems schedule")
        return (*train_uniform_dynamic(config, train_set, schedule, test_set), None)
    return (*train_uniform(config, train_set, test_set), None)


def nems_schedule(log: TrainLog) -> np.ndarray:
    """Per-iteration N_ems that drove the learning rate in a recorded run."""
    vals = log.column("nems")
    if any(v is None for v in vals):
        raise ValueError("log has iterations without an N_ems value")
    return np.asarray(vals, dtype=np.float64)
