"""
Ablations: learning-rate adjustment, time constant, refresh
===========================================================

Each variant changes one switch of the importance-sampled trainer. Runs are
short, so differences of a fraction of a percent are noise.
"""

from emais import TrainConfig, synthesize_gaussian_mixture, train_emais

train_set, test_set = synthesize_gaussian_mixture(10, 300, 20, separation=4.0, seed=2,
                                                  test_fraction=1 / 3)
base = TrainConfig(method="emais", T=2000, eval_interval=None, seed=2).to_dict()

variants = {
    "default (linear tau, lr adjust)": {},
    "no lr adjustment": {"lr_adjust": False},
    "fixed tau = 5000": {"tau": 5000},
    "unsmoothed N_ems": {"nems_smoothing": None},
    "full refresh every 500 it": {"refresh_interval": 500},
}
print(f"{'variant':34s} {'train loss':>10} {'test err%':>9} {'mean S(W)':>9} {'mean N_ems':>10}")
for name, change in variants.items():
    _, log, _ = train_emais(TrainConfig(**{**base, **change}), train_set, test_set)
    s = log.summary
    print(f"{name:34s} {s['final_train_loss']:10.4f} {s['final_error']:9.2f} "
          f"{s['mean_S_W']:9.3f} {s['mean_nems']:10.1f}")
