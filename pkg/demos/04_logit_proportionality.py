"""
Logit gradients as a cheap proxy
================================

Per-sample parameter gradients are expensive; the gradient with respect to
the logits costs one subtraction. Their norms move together, which is why
the sampler's statistics and the online trace estimates use logits.
"""

import numpy as np

from emais import LossKind, TrainConfig, synthesize_gaussian_mixture, train_uniform
from emais.oracle import Population, logit_param_proportionality

train_set, _ = synthesize_gaussian_mixture(10, 300, 20, separation=4.0, seed=0, test_fraction=1 / 3)
sub = np.random.default_rng(0).choice(train_set.M, 400, replace=False)

for T in (1, 300, 3000):
    params, _ = train_uniform(TrainConfig(method="uni", T=T, eval_interval=None, seed=0), train_set)
    pop = Population.from_model(params, train_set.features[sub], train_set.labels[sub],
                                LossKind.SOFTMAX_CE)
    print(f"after {T:5d} iterations: corr(||grad_theta||, ||grad_logit||) = "
          f"{logit_param_proportionality(pop):.3f}")
