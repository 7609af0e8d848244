"""
Estimating label shift from pseudo labels
=========================================

The source of the shift-A scenario is 70% class 0, the target is
uniform.  After adaptive training the class weights
alpha_l = mean_i delta_i(l) / (N_s^l / N_s) estimate the prior ratio
P_t(l) / P_s(l) without ever seeing a target label.
"""

import numpy as np

from ecan import TrainConfig, class_histogram, shift_a, synth_two_domain, train_ecan

config = shift_a(seed=0)
source, target, eval_labels = synth_two_domain(config)
counts, freq = class_histogram(source)
print("source class frequencies:", np.round(freq, 3).tolist())
print("true prior ratio:        ", np.round(config.prior_ratio(), 3).tolist())

# 1000 SGD iterations take a few seconds on one core
result = train_ecan(TrainConfig(seed=0, gamma=1.0, lam=0.1), source, target)
print("estimated alpha:         ", np.round(result.alpha.alpha, 3).tolist())

# alpha conserves mass: sum_l alpha_l * N_s^l / N_s = 1
print("mass check:", float(np.sum(result.alpha.alpha * freq)))

# The trajectory of alpha during training (clamped to [0, 10] while in use)
for rec in result.history[::200]:
    print(f"iter {rec['iteration']:4d}  w={rec['w']:.3f}  alpha={np.round(rec['alpha'], 2).tolist()}")
