"""Gaussian multi-kernels, their gradients and bandwidth selection.

A multi-kernel is a convex combination of Gaussian base kernels

    k(x, y) = sum_u beta_u * exp(-||x - y||^2 / (2 sigma_u^2))

with ``beta`` on the probability simplex.  Everything here is a pure
function of its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ContractError, InsufficientDataError

__all__ = [
    "KernelSpec",
    "as_batch",
    "multi_kernel_eval",
    "multi_kernel_grad",
    "median_bandwidth",
    "ladder_spec",
    "default_spec",
    "sq_dists",
    "base_grams",
    "gram",
    "pair_grad",
]

DEFAULT_LADDER = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class KernelSpec:
    """Bandwidths ``sigma_u`` and simplex weights ``beta_u`` of a multi-kernel."""

    bandwidths: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        bw = tuple(float(s) for s in np.atleast_1d(self.bandwidths))
        w = tuple(float(b) for b in np.atleast_1d(self.weights))
        object.__setattr__(self, "bandwidths", bw)
        object.__setattr__(self, "weights", w)
        if len(bw) < 1:
            raise ContractError("a kernel spec needs at least one bandwidth")
        if len(bw) != len(w):
            raise ContractError(f"{len(bw)} bandwidths but {len(w)} weights")
        if not all(np.isfinite(s) and s > 0 for s in bw):
            raise ContractError(f"bandwidths must be positive and finite: {bw}")
        if not all(np.isfinite(b) and b >= 0 for b in w):
            raise ContractError(f"weights must be non-negative: {w}")
        if abs(sum(w) - 1.0) > 1e-12:
            raise ContractError(f"weights must sum to 1, got {sum(w)!r}")

    @classmethod
    def single(cls, sigma: float) -> "KernelSpec":
        return cls((sigma,), (1.0,))

    @property
    def d(self) -> int:
        return len(self.bandwidths)


def as_batch(X, name: str = "X") -> np.ndarray:
    """Coerce to a finite float64 N x D matrix (1-D input becomes one column)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ContractError(f"{name} must be a non-empty N x D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ContractError(f"{name} contains non-finite entries")
    return X


def _as_point(x, name):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 1 or not np.all(np.isfinite(x)):
        raise ContractError(f"{name} must be a non-empty finite vector")
    return x


def multi_kernel_eval(x, y, spec: KernelSpec) -> float:
    """Evaluate the multi-kernel at a single pair of points."""
    x, y = _as_point(x, "x"), _as_point(y, "y")
    if x.shape != y.shape:
        raise ContractError(f"dimension mismatch: {x.size} vs {y.size}")
    d2 = float(np.sum((x - y) ** 2))
    return float(sum(b * np.exp(-d2 / (2.0 * s * s)) for s, b in zip(spec.bandwidths, spec.weights)))


def multi_kernel_grad(x, y, spec: KernelSpec) -> np.ndarray:
    """Gradient of :func:`multi_kernel_eval` with respect to ``x``."""
    x, y = _as_point(x, "x"), _as_point(y, "y")
    if x.shape != y.shape:
        raise ContractError(f"dimension mismatch: {x.size} vs {y.size}")
    diff = x - y
    d2 = float(diff @ diff)
    coef = sum(b / (s * s) * np.exp(-d2 / (2.0 * s * s)) for s, b in zip(spec.bandwidths, spec.weights))
    return -coef * diff


def sq_dists(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    # cdist differences coordinates directly, so identical rows give exactly 0
    if X.shape[1] != Y.shape[1]:
        raise ContractError(f"dimension mismatch: D={X.shape[1]} vs D={Y.shape[1]}")
    return cdist(X, Y, "sqeuclidean")


def base_grams(X: np.ndarray, Y: np.ndarray, spec: KernelSpec) -> list[np.ndarray]:
    """Per-base-kernel Gram matrices ``k_u(X_i, Y_j)``."""
    D2 = sq_dists(X, Y)
    return [np.exp(-D2 / (2.0 * s * s)) for s in spec.bandwidths]


def gram(X: np.ndarray, Y: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Multi-kernel Gram matrix."""
    D2 = sq_dists(X, Y)
    K = np.zeros_like(D2)
    for s, b in zip(spec.bandwidths, spec.weights):
        K += b * np.exp(-D2 / (2.0 * s * s))
    return K


def pair_grad(X: np.ndarray, Y: np.ndarray, W: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Row ``i`` is ``sum_j W[i, j] * dk(X_i, Y_j)/dX_i``."""
    D2 = sq_dists(X, Y)
    C = np.zeros_like(D2)
    for s, b in zip(spec.bandwidths, spec.weights):
        C += (b / (s * s)) * np.exp(-D2 / (2.0 * s * s))
    C *= W
    return -(C.sum(axis=1)[:, None] * X - C @ Y)


def median_bandwidth(samples) -> float:
    """Median-heuristic bandwidth: ``2 sigma^2`` equals the median squared
    pairwise distance over unordered pairs.  Falls back to 1.0 when all
    points coincide."""
    X = as_batch(samples, "samples")
    n = X.shape[0]
    if n < 2:
        raise InsufficientDataError("median_bandwidth needs at least 2 samples")
    iu = np.triu_indices(n, k=1)
    med = float(np.median(sq_dists(X, X)[iu]))
    if med <= 0.0:
        return 1.0
    return float(np.sqrt(med / 2.0))


def ladder_spec(sigma: float, ladder=DEFAULT_LADDER) -> KernelSpec:
    """Uniformly weighted kernels at ``sigma * ladder``."""
    d = len(ladder)
    return KernelSpec(tuple(sigma * f for f in ladder), (1.0 / d,) * d)


def default_spec(Xs, Xt) -> KernelSpec:
    """Five-kernel ladder around the median bandwidth of the pooled batch."""
    pooled = np.vstack([as_batch(Xs, "Xs"), as_batch(Xt, "Xt")])
    return ladder_spec(median_bandwidth(pooled))
