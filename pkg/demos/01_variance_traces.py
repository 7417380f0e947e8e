"""
Covariance traces on a small population
=======================================

Freeze a tiny network, compute every per-sample gradient, and compare the
noise of uniform sampling, importance sampling with some weights W, and
importance sampling with the norm-proportional optimum W*.
"""

import numpy as np

from emais import SamplingPlan, efficiency_score, estimate_traces
from emais.oracle import (
    exact_traces,
    mc_minibatch_covariance_trace,
    optimal_weights,
    random_population,
)
from emais.sampling import sample_with_replacement

rng = np.random.default_rng(0)
pop = random_population(rng, M=32)
print(f"population: M={pop.M}, D={pop.grads.shape[1]}")

# A proposal that roughly tracks gradient norms, plus multiplicative noise.
W = optimal_weights(pop) * np.exp(0.5 * rng.normal(size=pop.M))
exact = exact_traces(pop, W)
print(f"tr V_unif  = {exact.phi_unif:.5f}")
print(f"tr V_is(W) = {exact.phi_is:.5f}")
print(f"tr V_is(W*)= {exact.phi_ideal:.5f}")
print(f"S(W)       = {efficiency_score(exact):.3f}   (0 = optimal, 1 = no better than uniform)")

# The same three numbers, estimated from the draws of one big minibatch.
plan = SamplingPlan.from_weights(W)
idx = sample_with_replacement(plan.probs, 20_000, rng)
est = estimate_traces(pop.grads[idx], plan.coefficients[idx], space="parameter")
print("\nplug-in estimates from 20000 draws:")
for name in ("phi_unif", "phi_is", "phi_ideal"):
    print(f"  {name:9s} {getattr(est, name):.5f}  (exact {getattr(exact, name):.5f})")

# Effective minibatch size: the uniform batch size with the same noise.
N = 32
nems = exact.phi_unif / exact.phi_is * N
mc_is = mc_minibatch_covariance_trace(pop, plan, N, 50_000, rng)
mc_uni = mc_minibatch_covariance_trace(pop, SamplingPlan.uniform(pop.M), round(nems), 50_000, rng)
print(f"\nN={N} importance-sampled draws behave like N_ems={nems:.1f} uniform draws:")
print(f"  Monte Carlo trace, IS at N={N}:          {mc_is:.3e}")
print(f"  Monte Carlo trace, uniform at N={round(nems)}:    {mc_uni:.3e}")
