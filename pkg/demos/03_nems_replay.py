"""
Replaying the effective minibatch size
======================================

If N_ems really measures how much uniform data an importance-sampled batch
is worth, then uniform training whose batch size follows the recorded N_ems
(with the same learning-rate rescaling) should track the importance-sampled
run. This script records a schedule and replays it.
"""

import numpy as np

from emais import TrainConfig, synthesize_gaussian_mixture, train_emais, train_uniform_dynamic
from emais.trainer import nems_schedule

train_set, test_set = synthesize_gaussian_mixture(10, 300, 20, separation=4.0, seed=1,
                                                  test_fraction=1 / 3)
cfg = TrainConfig(method="emais", T=3000, eval_interval=None, seed=1)
_, em_log, _ = train_emais(cfg, train_set, test_set)
schedule = nems_schedule(em_log)

replay_cfg = TrainConfig(**{**cfg.to_dict(), "method": "uni-dynamic"})
_, replay_log = train_uniform_dynamic(replay_cfg, train_set, schedule, test_set)

print("recorded N_ems at a few iterations:",
      {t: round(float(schedule[t - 1]), 1) for t in (1, 100, 500, 1500, 3000)})
em_loss = em_log.summary["final_train_loss"]
re_loss = replay_log.summary["final_train_loss"]
print(f"final train loss: importance sampled {em_loss:.4f}, uniform replay {re_loss:.4f} "
      f"(relative gap {abs(re_loss - em_loss) / em_loss:.1%})")
print(f"uniform draws consumed by the replay: {int(np.sum(replay_log.column('batch_size')))} "
      f"vs {cfg.T * cfg.N} for the importance-sampled run")
