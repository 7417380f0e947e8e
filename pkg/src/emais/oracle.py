"""Brute-force ground truth on small populations.

Everything here sums over the whole population instead of sampling, so the
identities behind the minibatch estimators can be checked exactly. The
"direct" routines compute each covariance trace from its definition
(mean first, then squared deviations) and share no code with
:mod:`emais.variance_metrics`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .emais_state import IMPORTANCE_FLOOR
from .nn_core import LossKind, ModelParams, init_params, per_sample_param_gradients
from .sampling import SamplingPlan, sample_with_replacement
from .variance_metrics import TraceEstimates, efficiency_score, estimate_traces

MAX_EXACT_M = 64
MAX_EXACT_D = 10_000


class DegeneratePopulation(ValueError):
    pass


@dataclass
class Population:
    """Per-sample gradients of all ``M`` samples at one frozen parameter vector."""

    grads: np.ndarray
    logit_grads: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.grads = np.asarray(self.grads, dtype=np.float64)
        if self.grads.ndim != 2 or self.grads.shape[0] < 2:
            raise ValueError("population needs a (M >= 2, D) gradient array")
        if self.logit_grads is not None:
            self.logit_grads = np.asarray(self.logit_grads, dtype=np.float64)
            if self.logit_grads.shape[0] != self.grads.shape[0]:
                raise ValueError("logit gradients cover a different number of samples")

    @property
    def M(self) -> int:
        return self.grads.shape[0]

    @classmethod
    def from_model(cls, params: ModelParams, X, labels, loss: LossKind) -> "Population":
        _, dZ, G = per_sample_param_gradients(params, X, labels, loss)
        return cls(G, dZ)

    def check_exact_size(self):
        if self.M > MAX_EXACT_M or self.grads.shape[1] > MAX_EXACT_D:
            raise ValueError(
                f"exact oracle limited to M <= {MAX_EXACT_M}, D <= {MAX_EXACT_D}"
            )


def exact_mean(pop: Population, plan: SamplingPlan) -> np.ndarray:
    """``sum_i p_i r_i g_i`` -- the expected weighted gradient under ``plan``."""
    if plan.size != pop.M:
        raise ValueError("plan and population differ in size")
    return (plan.probs * plan.coefficients) @ pop.grads


def exact_traces(pop: Population, weights) -> TraceEstimates:
    """Population traces via the importance-weighted expectations under ``p_is(W)``.

    These are the same right-hand sides the minibatch estimator uses, with
    exact sums in place of sample means.
    """
    pop.check_exact_size()
    plan = SamplingPlan.from_weights(weights)
    p, r, G = plan.probs, plan.coefficients, pop.grads
    mu = (p * r) @ G
    mu2 = float(mu @ mu)
    sq = np.einsum("ij,ij->i", G, G)
    phi_is = float(p @ (r * r * sq)) - mu2
    phi_unif = float(p @ (r * sq)) - mu2
    phi_ideal = float(p @ (r * np.sqrt(sq))) ** 2 - mu2
    return TraceEstimates(phi_is, phi_unif, phi_ideal, mu2, "population")


def _weighted_cov_trace(values, probs):
    # two-pass: mean, then probability-weighted squared deviations
    mean = probs @ values
    dev = values - mean
    return float(probs @ np.einsum("ij,ij->i", dev, dev))


def direct_trace_uniform(pop: Population) -> float:
    M = pop.M
    return _weighted_cov_trace(pop.grads, np.full(M, 1.0 / M))


def direct_trace_is(pop: Population, weights) -> float:
    """Trace of the covariance of ``r(i) g_i`` with ``i ~ p_is(W)``, from the definition."""
    w = np.asarray(weights, dtype=np.float64)
    p = w / w.sum()
    r = (1.0 / pop.M) / p
    return _weighted_cov_trace(r[:, None] * pop.grads, p)


def direct_trace_optimal(pop: Population) -> float:
    """``(E_unif ||g||)^2 - ||E_unif g||^2`` evaluated directly."""
    norms = np.sqrt(np.einsum("ij,ij->i", pop.grads, pop.grads))
    mean = pop.grads.mean(axis=0)
    return float(norms.mean() ** 2 - mean @ mean)


def optimal_weights(pop: Population) -> np.ndarray:
    """``w*_i = ||g_i|| / M``, floored so zero-gradient samples stay sampleable."""
    norms = np.sqrt(np.einsum("ij,ij->i", pop.grads, pop.grads))
    if not np.any(norms > 0):
        raise DegeneratePopulation("all per-sample gradients are zero")
    w = norms / pop.M
    return np.maximum(w, IMPORTANCE_FLOOR * w.max())


def mc_minibatch_covariance_trace(pop: Population, plan: SamplingPlan, N: int,
                                  trials: int, rng: np.random.Generator,
                                  chunk: int = 10_000) -> float:
    """Trace of the empirical covariance of ``trials`` weighted minibatch means."""
    if trials < 1000:
        raise ValueError("use at least 1000 trials")
    if plan.size != pop.M:
        raise ValueError("plan and population differ in size")
    weighted = plan.coefficients[:, None] * pop.grads
    means = np.empty((trials, pop.grads.shape[1]))
    for start in range(0, trials, chunk):
        n = min(chunk, trials - start)
        idx = sample_with_replacement(plan.probs, n * N, rng).reshape(n, N)
        means[start:start + n] = weighted[idx].mean(axis=1)
    centred = means - means.mean(axis=0)
    return float(np.einsum("ij,ij->", centred, centred) / (trials - 1))


def logit_param_proportionality(pop: Population) -> float | None:
    """Pearson correlation of parameter- and logit-gradient norms across samples.

    ``None`` when either norm vector is constant.
    """
    if pop.logit_grads is None:
        raise ValueError("population has no logit gradients")
    a = np.linalg.norm(pop.grads, axis=1)
    b = np.linalg.norm(pop.logit_grads, axis=1)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return None
    return float(np.corrcoef(a, b)[0, 1])


# ---------------------------------------------------------------------------
# randomized proposition suite (used by tests and the ``verify`` command)


@dataclass
class CheckResult:
    name: str
    passed: bool
    deviation: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: deviation={self.deviation:.3e} "
                f"tol={self.tolerance:.1e} {self.detail}".rstrip())


def random_population(rng: np.random.Generator, M: int | None = None,
                      loss: LossKind = LossKind.SOFTMAX_CE) -> Population:
    """Gradients of a random tiny tanh MLP on random inputs and labels."""
    M = M or int(rng.integers(4, 33))
    d_in, hidden, n_out = int(rng.integers(2, 6)), int(rng.integers(3, 9)), int(rng.integers(2, 5))
    params = init_params([(d_in, hidden), (hidden, n_out)], rng)
    params.values *= rng.uniform(0.5, 2.0)
    X = rng.normal(size=(M, d_in)) * rng.uniform(0.5, 3.0, size=(M, 1))
    if loss is LossKind.SOFTMAX_CE:
        y = rng.integers(0, n_out, size=M)
    else:
        y = rng.integers(0, 2, size=(M, n_out))
    return Population.from_model(params, X, y, loss)


def random_plan_weights(rng: np.random.Generator, M: int) -> np.ndarray:
    return np.exp(rng.normal(scale=1.0, size=M))


def check_expectation_equivalence(pops, rng, plans_per_pop=10, tol=1e-10):
    worst = 0.0
    for pop in pops:
        base = exact_mean(pop, SamplingPlan.uniform(pop.M))
        direct = pop.grads.mean(axis=0)
        worst = max(worst, float(np.abs(base - direct).max()))
        for _ in range(plans_per_pop):
            plan = SamplingPlan.from_weights(random_plan_weights(rng, pop.M))
            worst = max(worst, float(np.abs(exact_mean(pop, plan) - direct).max()))
    return CheckResult("expectation equivalence (uniform vs any positive plan)",
                       worst <= tol, worst, tol)


def check_trace_identities(pops, rng, plans_per_pop=10, tol=1e-10, trace_fn=None):
    trace_fn = trace_fn or exact_traces
    worst = 0.0
    for pop in pops:
        ref_unif = direct_trace_uniform(pop)
        ref_opt = direct_trace_optimal(pop)
        for _ in range(plans_per_pop):
            W = random_plan_weights(rng, pop.M)
            est = trace_fn(pop, W)
            ref_is = direct_trace_is(pop, W)
            scale = max(1.0, abs(ref_unif))
            worst = max(worst,
                        abs(est.phi_is - ref_is) / max(1.0, abs(ref_is)),
                        abs(est.phi_unif - ref_unif) / scale,
                        abs(est.phi_ideal - ref_opt) / scale)
    return CheckResult("trace identities (weighted sums vs direct definitions)",
                       worst <= tol, worst, tol)


def check_optimality(pops, rng, sigmas=(0.1, 0.5, 1.0), perturbations=100, tol=1e-12):
    """tr V_is(W) >= tr V_is(W*) for multiplicative perturbations of W*."""
    worst_violation = -math.inf
    worst_identity = 0.0
    for pop in pops:
        W_star = optimal_weights(pop)
        at_opt = exact_traces(pop, W_star)
        worst_identity = max(worst_identity,
                             abs(at_opt.phi_is - direct_trace_optimal(pop)),
                             abs(at_opt.phi_is - at_opt.phi_ideal))
        for sigma in sigmas:
            xi = rng.normal(size=(perturbations, pop.M))
            for row in xi:
                phi = exact_traces(pop, W_star * np.exp(sigma * row)).phi_is
                worst_violation = max(worst_violation, at_opt.phi_is - phi)
    passed = worst_violation <= tol and worst_identity <= 1e-10
    return CheckResult("optimal weights minimise tr V_is", passed, max(worst_violation, 0.0),
                       tol, f"(identity at W*: {worst_identity:.1e})")


def check_score_endpoints(pops, tol=1e-10):
    worst = 0.0
    checked = 0
    for pop in pops:
        if direct_trace_uniform(pop) - direct_trace_optimal(pop) <= 1e-12:
            continue
        s_unif = efficiency_score(exact_traces(pop, np.ones(pop.M)))
        s_opt = efficiency_score(exact_traces(pop, optimal_weights(pop)))
        if s_unif is None or s_opt is None:
            continue
        checked += 1
        worst = max(worst, abs(s_unif - 1.0), abs(s_opt))
    return CheckResult("S(W) endpoints: S(uniform)=1, S(W*)=0", worst <= tol and checked > 0,
                       worst, tol, f"({checked} populations)")


def _good_plan(pop, rng):
    # an imperfect but useful proposal: W* with mild multiplicative noise
    return SamplingPlan.from_weights(optimal_weights(pop) * np.exp(0.3 * rng.normal(size=pop.M)))


def check_minibatch_scaling(pop, rng, N=8, trials=100_000, tol=0.03):
    """Covariance of the minibatch mean is tr V_is / N, and halves when N doubles."""
    plan = _good_plan(pop, rng)
    exact = exact_traces(pop, 1.0 / plan.coefficients).phi_is
    mc_n = mc_minibatch_covariance_trace(pop, plan, N, trials, rng)
    mc_2n = mc_minibatch_covariance_trace(pop, plan, 2 * N, trials, rng)
    dev = max(abs(mc_n - exact / N) / (exact / N), abs(2 * mc_2n - mc_n) / mc_n)
    return CheckResult("minibatch covariance scales as 1/N", dev <= tol, dev, tol)


def check_ems_equivalence(pop, rng, N=64, trials=100_000, tol=0.03):
    """Uniform sampling at round(N_ems) matches importance sampling at N.

    ``N`` must be large enough that rounding N_ems to an integer batch size
    costs well under the tolerance (at N_ems ~ 8 it alone is ~6%).
    """
    plan = _good_plan(pop, rng)
    est = exact_traces(pop, 1.0 / plan.coefficients)
    nems = est.phi_unif / est.phi_is * N
    n_unif = max(1, round(nems))
    mc_is = mc_minibatch_covariance_trace(pop, plan, N, trials, rng)
    mc_unif = mc_minibatch_covariance_trace(pop, SamplingPlan.uniform(pop.M), n_unif, trials, rng)
    dev = abs(mc_unif - mc_is) / mc_is
    return CheckResult("uniform at round(N_ems) matches IS at N", dev <= tol, dev, tol,
                       f"(N={N}, N_ems={nems:.2f})")


def check_plugin_consistency(pop, rng, draws=100_000, tol=0.01):
    """Minibatch plug-in estimates over many draws converge to the exact traces."""
    plan = _good_plan(pop, rng)
    exact = exact_traces(pop, 1.0 / plan.coefficients)
    idx = sample_with_replacement(plan.probs, draws, rng)
    est = estimate_traces(pop.grads[idx], plan.coefficients[idx], space="population")
    dev = max(abs(getattr(est, k) - getattr(exact, k)) / abs(getattr(exact, k))
              for k in ("phi_is", "phi_unif", "phi_ideal"))
    return CheckResult("plug-in trace estimates match exact traces", dev <= tol, dev, tol,
                       f"({draws} draws)")


def run_suite(seed: int = 0, n_pops: int = 20, trials: int = 100_000,
              trace_fn=None) -> list[CheckResult]:
    """Run every population-level identity on randomized populations."""
    rng = np.random.default_rng(seed)
    pops = [random_population(rng) for _ in range(n_pops)]
    pops.append(random_population(rng, loss=LossKind.BCE))
    big = random_population(rng, M=32)
    return [
        check_expectation_equivalence(pops, rng),
        check_trace_identities(pops, rng, trace_fn=trace_fn),
        check_optimality(pops[:5], rng),
        check_score_endpoints(pops),
        check_ems_equivalence(big, rng, trials=trials),
        check_minibatch_scaling(big, rng, trials=trials),
        check_plugin_consistency(big, rng, draws=trials),
    ]
