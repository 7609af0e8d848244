"""Finite-difference checks for every analytic gradient in the library.

``run_suite`` draws seeded instances and compares, for each component,
the analytic gradient with a central difference of the scalar it claims
to differentiate:

* ``kernel``       -- the multi-kernel with respect to its first argument
* ``mmd_unbiased`` -- unbiased MMD^2 w.r.t. both sample sets
* ``mmd_weighted`` -- class-weighted MMD^2 w.r.t. both sample sets
* ``mmd_conditional`` -- class-conditional MMD^2 w.r.t. both sample sets
* ``softmax``      -- mean cross-entropy w.r.t. the logits
* ``joint``        -- the full joint objective w.r.t. every network parameter
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import mmd as _mmd
from .adaptation import joint_loss
from .kernels import default_spec, multi_kernel_eval, multi_kernel_grad
from .mmd import ClassWeights
from .model import init_params, softmax_loss_and_grad

__all__ = ["central_difference", "relative_error", "run_suite", "COMPONENTS"]

COMPONENTS = ("kernel", "mmd_unbiased", "mmd_weighted", "mmd_conditional", "softmax", "joint")


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by ``(f(x+h e_i) - f(x-h e_i)) / 2h``.

    ``x`` is perturbed in place and restored.
    """
    g = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic, numeric) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, 1e-3 * max|n|)``.

    The floor keeps entries that are zero up to rounding from dominating.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    floor = max(1e-3 * float(np.max(np.abs(n))), 1e-300)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def _pair_error(grads, f_s, f_t, Xs, Xt):
    gs, gt = grads
    return max(relative_error(gs, central_difference(f_s, Xs)),
               relative_error(gt, central_difference(f_t, Xt)))


def _instance(rng, Ns, Nt, D, L, hidden):
    Xs = rng.standard_normal((Ns, D))
    Xt = rng.standard_normal((Nt, D)) + 0.5
    # cycling labels keep every class populated (>= 2 each when N >= 2L)
    ys = rng.permutation(np.arange(Ns) % L)
    yt = rng.permutation(np.arange(Nt) % L)
    alpha = ClassWeights(rng.uniform(0.2, 3.0, L))
    params = init_params([D, hidden, L], rng)
    for b in params.biases:
        b[:] = 0.1 * rng.standard_normal(b.shape)
    return Xs, ys, Xt, yt, alpha, params


def run_suite(instances: int = 50, seed: int = 0, Ns: int = 16, Nt: int = 16, D: int = 8, L: int = 7,
              hidden: int = 10, gamma: float = 0.7, lam: float = 0.4) -> dict[str, float]:
    """Worst relative error of each component over ``instances`` seeded draws."""
    worst = dict.fromkeys(COMPONENTS, 0.0)
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        Xs, ys, Xt, yt, alpha, params = _instance(rng, Ns, Nt, D, L, hidden)
        spec = default_spec(Xs, Xt)

        x, y = Xs[0].copy(), Xt[0]
        err = relative_error(multi_kernel_grad(x, y, spec),
                             central_difference(lambda z: multi_kernel_eval(z, y, spec), x))
        worst["kernel"] = max(worst["kernel"], err)

        err = _pair_error(_mmd.grad_unbiased_mmd(Xs, Xt, spec),
                          lambda z: _mmd.mmd2_unbiased(z, Xt, spec),
                          lambda z: _mmd.mmd2_unbiased(Xs, z, spec), Xs, Xt)
        worst["mmd_unbiased"] = max(worst["mmd_unbiased"], err)

        err = _pair_error(_mmd.grad_weighted_mmd(Xs, ys, alpha, Xt, spec),
                          lambda z: _mmd.mmd2_weighted(z, ys, alpha, Xt, spec),
                          lambda z: _mmd.mmd2_weighted(Xs, ys, alpha, z, spec), Xs, Xt)
        worst["mmd_weighted"] = max(worst["mmd_weighted"], err)

        err = _pair_error(_mmd.grad_conditional_mmd(Xs, ys, Xt, yt, spec),
                          lambda z: _mmd.mmd2_conditional(z, ys, Xt, yt, spec).value,
                          lambda z: _mmd.mmd2_conditional(Xs, ys, z, yt, spec).value, Xs, Xt)
        worst["mmd_conditional"] = max(worst["mmd_conditional"], err)

        logits = 2.0 * rng.standard_normal((Ns, L))
        _, dl = softmax_loss_and_grad(logits, ys)
        err = relative_error(dl, central_difference(lambda z: softmax_loss_and_grad(z, ys)[0], logits))
        worst["softmax"] = max(worst["softmax"], err)

        def objective(_):
            return joint_loss(params, Xs, ys, Xt, yt, alpha, spec, gamma, lam).loss

        grads = joint_loss(params, Xs, ys, Xt, yt, alpha, spec, gamma, lam).grads
        for arr, g in zip(params.arrays(), grads.arrays()):
            worst["joint"] = max(worst["joint"], relative_error(g, central_difference(objective, arr)))
    return worst
