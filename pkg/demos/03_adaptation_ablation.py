"""
Does adaptation help?  An ablation on a shifted scenario
========================================================

Source-only training against the three regularizer variants: class
re-weighted marginal MMD, class-conditional MMD, and both.  Target labels
are used only to score the final models.
"""

from ecan import TrainConfig, run_ablation, shift_a, synth_two_domain, train_ecan, evaluate

source, target, eval_labels = synth_two_domain(shift_a(seed=1))
config = TrainConfig(seed=1, gamma=1.0, lam=0.1)

scores = run_ablation(config, source, target, eval_labels)

# Plain marginal MMD (alpha fixed to 1) for comparison: under label shift it
# pulls the imbalanced source marginal onto the balanced target one
plain = train_ecan(config.variant("mmd"), source, target)
scores["plain mmd"] = evaluate(plain.params, target.X, eval_labels).accuracy

for name, acc in scores.items():
    print(f"{name:>20}: {100 * acc:5.1f}%")
