"""Dataset-bias probes over feature vectors.

Two protocols:

* ``dataset_recognition`` -- "name the dataset": train a K-way linear
  classifier whose labels are dataset identities and report how far above
  chance it gets.
* ``cross_dataset_matrix`` -- train on each dataset, test on every other,
  and summarize each row by its mean off-diagonal accuracy and the percent
  drop from the in-dataset (diagonal) accuracy.

Both use a linear softmax classifier trained with momentum SGD in place of
a linear SVM.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InsufficientDataError
from .model import ModelParams, OptimizerState, backward, forward, init_params, sgd_step, softmax_loss_and_grad

__all__ = [
    "SoftmaxTrainer",
    "LinearClassifier",
    "CrossMatrix",
    "dataset_recognition",
    "cross_dataset_matrix",
    "HOLDOUT_FRACTION",
]

HOLDOUT_FRACTION = 0.2


@dataclass(frozen=True)
class LinearClassifier:
    """Standardization statistics plus a softmax model."""

    mean: np.ndarray
    std: np.ndarray
    params: ModelParams

    def predict(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.std
        _, _, probs = forward(self.params, Z)
        return np.argmax(probs, axis=1)


@dataclass(frozen=True)
class SoftmaxTrainer:
    """Mini-batch SGD for a (by default linear) softmax classifier.

    Features are standardized with the training set's statistics first.
    """

    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    hidden: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        if not self.lr > 0 or not 0 <= self.momentum < 1:
            raise ContractError("need lr > 0 and momentum in [0, 1)")

    def fit(self, X, y, n_classes: int, rng: np.random.Generator) -> LinearClassifier:
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.shape[0] != y.shape[0] or X.shape[0] == 0:
            raise ContractError("need matching, non-empty features and labels")
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        Z = (X - mean) / std
        params = init_params([X.shape[1], *self.hidden, n_classes], rng)
        # every layer at the base rate: there is no pretrained trunk here
        opt = OptimizerState.create(params, self.lr, self.momentum, classifier_mult=1.0)
        size = min(self.batch_size, Z.shape[0])
        for _ in range(self.epochs):
            order = rng.permutation(Z.shape[0])
            for b in range(Z.shape[0] // size):
                idx = order[b * size:(b + 1) * size]
                _, logits, _ = forward(params, Z[idx])
                _, dlogits = softmax_loss_and_grad(logits, y[idx])
                params, opt = sgd_step(params, backward(params, Z[idx], None, dlogits), opt)
        return LinearClassifier(mean, std, params)


def _confusion(y, pred, L):
    conf = np.zeros((L, L), dtype=np.int64)
    np.add.at(conf, (y, pred), 1)
    return conf


def dataset_recognition(datasets, n_train: int, n_test: int, trials: int = 10, seed: int = 0,
                        trainer: SoftmaxTrainer | None = None) -> tuple[float, np.ndarray]:
    """Trial-averaged accuracy at telling the datasets apart, and the summed
    K x K (true dataset x predicted dataset) confusion matrix.

    Every trial draws ``n_train`` training and ``n_test`` disjoint test
    samples from each dataset.
    """
    datasets = list(datasets)
    K = len(datasets)
    if K < 2:
        raise ContractError("dataset recognition needs at least 2 datasets")
    if n_train < 1 or n_test < 1 or trials < 1:
        raise ContractError("n_train, n_test and trials must be >= 1")
    D = datasets[0].D
    for k, ds in enumerate(datasets):
        if ds.D != D:
            raise ContractError(f"dataset {k} has D={ds.D}, expected {D}")
        if ds.N < n_train + n_test:
            raise InsufficientDataError(
                f"dataset {k} ({ds.domain or 'unnamed'}) has {ds.N} samples; need {n_train + n_test}")
    trainer = trainer or SoftmaxTrainer()
    conf = np.zeros((K, K), dtype=np.int64)
    accs = []
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        tr_X, tr_y, te_X, te_y = [], [], [], []
        for k, ds in enumerate(datasets):
            perm = rng.permutation(ds.N)
            tr_X.append(ds.X[perm[:n_train]])
            te_X.append(ds.X[perm[n_train:n_train + n_test]])
            tr_y.append(np.full(n_train, k))
            te_y.append(np.full(n_test, k))
        clf = trainer.fit(np.vstack(tr_X), np.concatenate(tr_y), K, rng)
        y = np.concatenate(te_y)
        pred = clf.predict(np.vstack(te_X))
        accs.append(float(np.mean(pred == y)))
        conf += _confusion(y, pred, K)
    return float(np.mean(accs)), conf


@dataclass
class CrossMatrix:
    """Train-dataset (rows) x test-dataset (columns) accuracies."""

    matrix: np.ndarray
    names: list[str]

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        K = self.matrix.shape[0]
        if self.matrix.shape != (K, K) or K < 2:
            raise ContractError("cross matrix must be K x K with K >= 2")
        if len(self.names) != K:
            raise ContractError(f"{len(self.names)} names for a {K} x {K} matrix")

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.matrix).copy()

    @property
    def mean_others(self) -> np.ndarray:
        K = self.matrix.shape[0]
        off = ~np.eye(K, dtype=bool)
        return np.array([self.matrix[i, off[i]].mean() for i in range(K)])

    @property
    def percent_drop(self) -> np.ndarray:
        """Rounded ``100 * (diag - mean_others) / diag``; NaN where diag is 0."""
        d = self.diagonal
        out = np.full(d.shape, np.nan)
        ok = d > 0
        out[ok] = np.round(100.0 * (d[ok] - self.mean_others[ok]) / d[ok]) + 0.0  # no -0
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["train\\test", *self.names])
            for name, row in zip(self.names, self.matrix):
                w.writerow([name, *(f"{v:.6f}" for v in row)])

    def write_summary(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "in_dataset", "mean_others", "percent_drop"])
            for name, d, m, p in zip(self.names, self.diagonal, self.mean_others, self.percent_drop):
                w.writerow([name, f"{d:.6f}", f"{m:.6f}", "nan" if np.isnan(p) else f"{p:.0f}"])


def _holdout(n, rng):
    perm = rng.permutation(n)
    n_test = max(1, int(round(HOLDOUT_FRACTION * n)))
    if n - n_test < 1:
        raise InsufficientDataError(f"cannot split {n} samples into train and test")
    return perm[n_test:], perm[:n_test]


def cross_dataset_matrix(datasets, trainer: SoftmaxTrainer | None = None, seed: int = 0,
                         names=None) -> CrossMatrix:
    """Cross-dataset generalization matrix.

    Off-diagonal cell (i, j): train on all of dataset i, test on all of j.
    Diagonal cell (i, i): seeded 80/20 train/test split of dataset i.
    All datasets must be labeled over the same class set.
    """
    datasets = list(datasets)
    K = len(datasets)
    if K < 2:
        raise ContractError("need at least 2 datasets")
    for k, ds in enumerate(datasets):
        ds.require_labels(f"dataset {k}")
    L = datasets[0].n_classes
    D = datasets[0].D
    for k, ds in enumerate(datasets):
        if ds.n_classes != L:
            raise ContractError(f"class-set mismatch: dataset {k} has {ds.n_classes} classes, expected {L}")
        if ds.D != D:
            raise ContractError(f"dataset {k} has D={ds.D}, expected {D}")
    trainer = trainer or SoftmaxTrainer()
    if names is None:
        names = [ds.domain or f"d{k}" for k, ds in enumerate(datasets)]
    M = np.zeros((K, K))
    for i, src in enumerate(datasets):
        rng = np.random.default_rng([seed, i])
        tr, te = _holdout(src.N, rng)
        clf = trainer.fit(src.X[tr], src.labels[tr], L, rng)
        M[i, i] = np.mean(clf.predict(src.X[te]) == src.labels[te])
        full = trainer.fit(src.X, src.labels, L, np.random.default_rng([seed, i, 1]))
        for j, dst in enumerate(datasets):
            if j != i:
                M[i, j] = np.mean(full.predict(dst.X) == dst.labels)
    return CrossMatrix(M, list(names))
