"""
Name that dataset: probing capture bias
=======================================

If a linear classifier can tell which collection a feature vector came
from, the collections are biased relative to each other.  The cross-dataset
matrix then shows how much accuracy is lost when moving between them.
"""

import numpy as np

from ecan import Dataset, cross_dataset_matrix, dataset_recognition

rng = np.random.default_rng(0)
D = 8

def collection(offset, n=400):
    X = rng.standard_normal((n, D)) + offset
    y = (X[:, 0] - offset[0] + X[:, 1] - offset[1] > 0).astype(int)
    return Dataset(X, y)

# Three collections of the same task, each with its own capture offset
offsets = [np.zeros(D), np.r_[0.8, np.zeros(D - 1)], np.r_[0.0, -0.8, np.zeros(D - 2)]]
sets = [collection(o) for o in offsets]

acc, conf = dataset_recognition(sets, n_train=200, n_test=100, trials=10)
print(f"dataset recognition: {100 * acc:.1f}% (chance 33.3%)")
print(conf)

cm = cross_dataset_matrix(sets, names=["A", "B", "C"])
print(np.round(cm.matrix, 3))
for name, d, m, p in zip(cm.names, cm.diagonal, cm.mean_others, cm.percent_drop):
    print(f"{name}: in-dataset {d:.3f}  mean others {m:.3f}  drop {p:.0f}%")
