"""Empirical MMD estimators and the gradients of the two training regularizers.

By default every reduction goes through :func:`math.fsum`, so estimators
are exactly invariant to reordering samples within a domain and
reproducible bit for bit.  The training path uses plain numpy sums.  Gradients are derived from the loss expressions themselves (each
U-statistic pair contributes to both of its endpoints).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateInputError, InsufficientDataError
from .kernels import KernelSpec, as_batch, gram, sq_dists

__all__ = [
    "ClassWeights",
    "ClassPartition",
    "ConditionalTerms",
    "mmd2_biased",
    "mmd2_unbiased",
    "mmd2_weighted",
    "mmd2_conditional",
    "grad_unbiased_mmd",
    "grad_weighted_mmd",
    "grad_conditional_mmd",
    "weighted_value_and_grad",
    "conditional_value_and_grad",
]

MIN_CLASS_SIZE = 2


@dataclass(frozen=True)
class ClassWeights:
    """Per-class source re-sampling ratios, indexed by class label."""

    alpha: np.ndarray
    # classes that had no source samples and were forced to 0
    absent: tuple[int, ...] = ()

    def __post_init__(self):
        a = np.array(self.alpha, dtype=np.float64).ravel()
        if a.size < 1 or not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ContractError(f"alpha must be finite and non-negative: {a}")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @classmethod
    def ones(cls, n_classes: int) -> "ClassWeights":
        return cls(np.ones(n_classes))

    def __len__(self):
        return self.alpha.size

    def per_sample(self, labels: np.ndarray) -> np.ndarray:
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() >= self.alpha.size):
            raise ContractError(
                f"label {int(labels.max())} has no alpha entry (only {self.alpha.size} classes)"
            )
        return self.alpha[labels]


@dataclass(frozen=True)
class ClassPartition:
    """Disjoint per-class index lists into a batch."""

    indices: dict[int, np.ndarray]

    @classmethod
    def from_labels(cls, labels) -> "ClassPartition":
        labels = np.asarray(labels)
        return cls({int(c): np.flatnonzero(labels == c) for c in np.unique(labels)})

    def count(self, label: int) -> int:
        idx = self.indices.get(label)
        return 0 if idx is None else int(idx.size)


@dataclass
class ConditionalTerms:
    """Per-class breakdown of the class-conditional estimator."""

    value: float
    per_class: dict[int, float] = field(default_factory=dict)
    skipped: list[int] = field(default_factory=list)
    source_counts: dict[int, int] = field(default_factory=dict)
    target_counts: dict[int, int] = field(default_factory=dict)


def _check_pair(Xs, Xt):
    Xs, Xt = as_batch(Xs, "Xs"), as_batch(Xt, "Xt")
    if Xs.shape[1] != Xt.shape[1]:
        raise ContractError(f"dimension mismatch: D={Xs.shape[1]} vs D={Xt.shape[1]}")
    return Xs, Xt


def _labels(y, n, name):
    y = np.asarray(y)
    if y.shape != (n,):
        raise ContractError(f"{name} must have one label per sample ({n}), got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise ContractError(f"{name} must be integer class labels")
        y = y.astype(np.int64)
    if y.size and y.min() < 0:
        raise ContractError(f"{name} contains negative labels")
    return y


def _total(K: np.ndarray, exact: bool) -> float:
    return math.fsum(K.ravel().tolist()) if exact else float(K.sum())


def _offdiag(K: np.ndarray, exact: bool) -> float:
    if exact:
        return math.fsum(K[~np.eye(K.shape[0], dtype=bool)].tolist())
    return float(K.sum() - np.trace(K))


def _grams(X, Y, spec):
    """Multi-kernel Gram and its bandwidth-scaled companion ``sum_u beta_u/sigma_u^2 k_u``."""
    D2 = sq_dists(X, Y)
    K, C = np.zeros_like(D2), np.zeros_like(D2)
    for s, b in zip(spec.bandwidths, spec.weights):
        E = np.exp(-D2 / (2.0 * s * s))
        K += b * E
        C += (b / (s * s)) * E
    return K, C


def _row_grad(X, Y, C):
    # row i: -sum_j C[i, j] (X_i - Y_j)
    return -(C.sum(axis=1)[:, None] * X - C @ Y)


def _weighted_core(Xs, a, Xt, spec, exact=True, need_grad=True):
    """Value of the weighted U-statistic (``a`` per source row) and optionally
    its gradients, sharing one set of Gram matrices."""
    ns, nt = Xs.shape[0], Xt.shape[0]
    Kss, Css = _grams(Xs, Xs, spec)
    Ktt, Ctt = _grams(Xt, Xt, spec)
    Kst, Cst = _grams(Xs, Xt, spec)
    aa = np.outer(a, a)
    value = (
        _offdiag(Kss * aa, exact) / (ns * (ns - 1))
        + _offdiag(Ktt, exact) / (nt * (nt - 1))
        - 2.0 * _total(Kst * a[:, None], exact) / (ns * nt)
    )
    if not need_grad:
        return value, None, None
    np.fill_diagonal(Css, 0.0)
    np.fill_diagonal(Ctt, 0.0)
    dXs = (2.0 / (ns * (ns - 1))) * a[:, None] * _row_grad(Xs, Xs, Css * a[None, :]) \
        - (2.0 / (ns * nt)) * a[:, None] * _row_grad(Xs, Xt, Cst)
    dXt = (2.0 / (nt * (nt - 1))) * _row_grad(Xt, Xt, Ctt) \
        - (2.0 / (ns * nt)) * _row_grad(Xt, Xs, Cst.T * a[None, :])
    return value, dXs, dXt


def mmd2_biased(Xs, Xt, spec: KernelSpec, *, exact: bool = True) -> float:
    """Squared distance between empirical mean embeddings (V-statistic)."""
    Xs, Xt = _check_pair(Xs, Xt)
    ns, nt = Xs.shape[0], Xt.shape[0]
    v = (
        _total(gram(Xs, Xs, spec), exact) / (ns * ns)
        + _total(gram(Xt, Xt, spec), exact) / (nt * nt)
        - 2.0 * _total(gram(Xs, Xt, spec), exact) / (ns * nt)
    )
    # the true value is a squared norm; only rounding can push it below 0
    return max(v, 0.0)


def _need_two(Xs, Xt, what):
    ns, nt = Xs.shape[0], Xt.shape[0]
    if ns < 2 or nt < 2:
        raise InsufficientDataError(f"{what} needs >= 2 samples per domain, got {ns}, {nt}")


def mmd2_unbiased(Xs, Xt, spec: KernelSpec, *, exact: bool = True) -> float:
    """U-statistic estimate of MMD^2 (i != j within each domain).

    ``exact=False`` swaps the correctly rounded reductions for plain numpy
    sums; results then agree to rounding but lose exact order invariance.
    """
    Xs, Xt = _check_pair(Xs, Xt)
    _need_two(Xs, Xt, "unbiased MMD")
    ns, nt = Xs.shape[0], Xt.shape[0]
    return (
        _offdiag(gram(Xs, Xs, spec), exact) / (ns * (ns - 1))
        + _offdiag(gram(Xt, Xt, spec), exact) / (nt * (nt - 1))
        - 2.0 * _total(gram(Xs, Xt, spec), exact) / (ns * nt)
    )


def mmd2_weighted(Xs, ys, alpha: ClassWeights, Xt, spec: KernelSpec, *, exact: bool = True) -> float:
    """Class re-weighted U-statistic: source sample ``i`` carries ``alpha[ys[i]]``."""
    Xs, Xt = _check_pair(Xs, Xt)
    _need_two(Xs, Xt, "weighted MMD")
    a = alpha.per_sample(_labels(ys, Xs.shape[0], "ys"))
    return _weighted_core(Xs, a, Xt, spec, exact, need_grad=False)[0]


def _class_terms(ys, yt):
    ps, pt = ClassPartition.from_labels(ys), ClassPartition.from_labels(yt)
    classes = sorted(set(ps.indices) | set(pt.indices))
    used = [c for c in classes if ps.count(c) >= MIN_CLASS_SIZE and pt.count(c) >= MIN_CLASS_SIZE]
    skipped = [c for c in classes if c not in used]
    return ps, pt, classes, used, skipped


def _conditional_core(Xs, ys, Xt, yt, spec, exact, need_grad):
    Xs, Xt = _check_pair(Xs, Xt)
    ys = _labels(ys, Xs.shape[0], "ys")
    yt = _labels(yt, Xt.shape[0], "yt_pseudo")
    ps, pt, classes, used, skipped = _class_terms(ys, yt)
    if not used:
        raise DegenerateInputError(
            "no class has at least 2 source and 2 target samples; conditional MMD undefined"
        )
    dXs = np.zeros_like(Xs) if need_grad else None
    dXt = np.zeros_like(Xt) if need_grad else None
    per_class = {}
    for c in used:
        si, ti = ps.indices[c], pt.indices[c]
        v, gs, gt = _weighted_core(Xs[si], np.ones(si.size), Xt[ti], spec, exact, need_grad)
        per_class[c] = v
        if need_grad:
            dXs[si] = gs
            dXt[ti] = gt
    total = math.fsum(per_class[c] for c in used) if exact else sum(per_class[c] for c in used)
    terms = ConditionalTerms(
        value=total,
        per_class=per_class,
        skipped=skipped,
        source_counts={c: ps.count(c) for c in classes},
        target_counts={c: pt.count(c) for c in classes},
    )
    return terms, dXs, dXt


def mmd2_conditional(Xs, ys, Xt, yt_pseudo, spec: KernelSpec, *, exact: bool = True) -> ConditionalTerms:
    """Sum over classes of the unbiased MMD^2 between source samples with true
    label ``l`` and target samples with pseudo label ``l``.

    Classes with fewer than two samples on either side are skipped and listed
    in ``skipped``.  Raises :class:`DegenerateInputError` when every class is
    skipped.
    """
    return _conditional_core(Xs, ys, Xt, yt_pseudo, spec, exact, need_grad=False)[0]


def grad_unbiased_mmd(Xs, Xt, spec: KernelSpec):
    """Gradients of :func:`mmd2_unbiased` w.r.t. every source and target row."""
    Xs, Xt = _check_pair(Xs, Xt)
    _need_two(Xs, Xt, "unbiased MMD")
    return _weighted_core(Xs, np.ones(Xs.shape[0]), Xt, spec, exact=False)[1:]


def grad_weighted_mmd(Xs, ys, alpha: ClassWeights, Xt, spec: KernelSpec):
    """Gradients of :func:`mmd2_weighted`; ``alpha`` is held constant."""
    Xs, Xt = _check_pair(Xs, Xt)
    _need_two(Xs, Xt, "weighted MMD")
    a = alpha.per_sample(_labels(ys, Xs.shape[0], "ys"))
    return _weighted_core(Xs, a, Xt, spec, exact=False)[1:]


def grad_conditional_mmd(Xs, ys, Xt, yt_pseudo, spec: KernelSpec):
    """Gradients of the class-conditional sum.  Rows belonging to skipped
    classes are zero."""
    return _conditional_core(Xs, ys, Xt, yt_pseudo, spec, exact=False, need_grad=True)[1:]


def weighted_value_and_grad(Xs, ys, alpha: ClassWeights | None, Xt, spec: KernelSpec):
    """``(mmd2_weighted, dXs, dXt)`` from one set of Gram matrices, with fast
    reductions.  ``alpha=None`` gives the plain unbiased estimator."""
    Xs, Xt = _check_pair(Xs, Xt)
    _need_two(Xs, Xt, "weighted MMD")
    if alpha is None:
        a = np.ones(Xs.shape[0])
    else:
        a = alpha.per_sample(_labels(ys, Xs.shape[0], "ys"))
    return _weighted_core(Xs, a, Xt, spec, exact=False)


def conditional_value_and_grad(Xs, ys, Xt, yt_pseudo, spec: KernelSpec):
    """``(ConditionalTerms, dXs, dXt)`` with fast reductions."""
    return _conditional_core(Xs, ys, Xt, yt_pseudo, spec, exact=False, need_grad=True)
