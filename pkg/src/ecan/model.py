"""A small multi-layer perceptron standing in for the network head.

The last hidden layer is the adaptation feature space: every MMD term is
evaluated on its activations.  With zero hidden layers the features are the
raw inputs and the model is a linear softmax classifier.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, NumericalError

__all__ = [
    "ModelParams",
    "OptimizerState",
    "init_params",
    "forward",
    "softmax",
    "softmax_loss_and_grad",
    "backward",
    "sgd_step",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]

ACTIVATIONS = ("tanh", "softplus")
CHECKPOINT_MAGIC = b"ECANCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    """Weights ``W[i]`` (fan_in x fan_out) and biases ``b[i]`` per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ContractError(f"layer {i}: weight {W.shape} and bias {b.shape} do not fit")
            if i and self.weights[i - 1].shape[1] != W.shape[0]:
                raise ContractError(f"layer {i} expects {W.shape[0]} inputs, previous layer emits "
                                    f"{self.weights[i - 1].shape[1]}")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "ModelParams":
        return ModelParams([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.activation)

    def zeros_like(self) -> "ModelParams":
        return ModelParams([np.zeros_like(W) for W in self.weights],
                           [np.zeros_like(b) for b in self.biases], self.activation)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class OptimizerState:
    """Momentum buffers plus learning-rate settings for :func:`sgd_step`."""

    velocity: ModelParams
    lr: float
    momentum: float = 0.9
    multipliers: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.lr < 0:
            raise ContractError(f"learning rate must be non-negative, got {self.lr}")
        n = len(self.velocity.weights)
        if not self.multipliers:
            self.multipliers = [1.0] * n
        if len(self.multipliers) != n:
            raise ContractError(f"{len(self.multipliers)} multipliers for {n} layers")

    @classmethod
    def create(cls, params: ModelParams, lr: float, momentum: float = 0.9,
               classifier_mult: float = 10.0) -> "OptimizerState":
        """Zero velocity; the classifier (last) layer runs at ``classifier_mult`` x ``lr``."""
        mult = [1.0] * (len(params.weights) - 1) + [classifier_mult]
        return cls(params.zeros_like(), lr, momentum, mult)


def init_params(sizes, rng: np.random.Generator, activation: str = "tanh") -> ModelParams:
    """Glorot-uniform weights and zero biases for layer widths ``sizes``."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ContractError(f"layer sizes must be >= 1 and list input and output: {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases, activation)


def _act(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    return np.logaddexp(0.0, z)


def _act_grad(z, a, kind):
    if kind == "tanh":
        return 1.0 - a * a
    return 0.5 * (1.0 + np.tanh(0.5 * z))  # logistic sigmoid, overflow free


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_input(params, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.sizes[0]:
        raise ContractError(f"model expects N x {params.sizes[0]} input, got shape {X.shape}")
    return X


def _forward_cache(params, X):
    acts, pre = [X], []
    a = X
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        z = a @ W + b
        a = _act(z, params.activation)
        pre.append(z)
        acts.append(a)
    logits = a @ params.weights[-1] + params.biases[-1]
    return acts, pre, logits


def forward(params: ModelParams, X):
    """Return ``(features, logits, probs)`` for a batch."""
    X = _check_input(params, X)
    acts, _, logits = _forward_cache(params, X)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite activations in forward pass")
    return acts[-1], logits, softmax(logits)


def softmax_loss_and_grad(logits, y):
    """Mean cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y)
    n, L = logits.shape
    if y.shape != (n,) or (n and (y.min() < 0 or y.max() >= L)):
        raise ContractError(f"labels must be {n} integers in [0, {L})")
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))[:, 0]
    rows = np.arange(n)
    loss = float(np.mean(lse - logits[rows, y]))
    d = softmax(logits)
    d[rows, y] -= 1.0
    return loss, d / n


def backward(params: ModelParams, X, dfeatures=None, dlogits=None) -> ModelParams:
    """Reverse-mode gradients of a scalar whose partials w.r.t. the feature
    tap and the logits are ``dfeatures`` and ``dlogits`` (either may be None).
    Contributions at the tap and at the logits are summed."""
    X = _check_input(params, X)
    acts, pre, logits = _forward_cache(params, X)
    if dlogits is None:
        dlogits = np.zeros_like(logits)
    if dfeatures is None:
        dfeatures = np.zeros_like(acts[-1])
    dlogits = np.asarray(dlogits, dtype=np.float64)
    dfeatures = np.asarray(dfeatures, dtype=np.float64)
    if dlogits.shape != logits.shape or dfeatures.shape != acts[-1].shape:
        raise ContractError(
            f"upstream gradients {dfeatures.shape}, {dlogits.shape} do not match "
            f"forward outputs {acts[-1].shape}, {logits.shape}"
        )
    grads = params.zeros_like()
    grads.weights[-1] = acts[-1].T @ dlogits
    grads.biases[-1] = dlogits.sum(axis=0)
    g = dlogits @ params.weights[-1].T + dfeatures
    for i in range(len(params.weights) - 2, -1, -1):
        gz = g * _act_grad(pre[i], acts[i + 1], params.activation)
        grads.weights[i] = acts[i].T @ gz
        grads.biases[i] = gz.sum(axis=0)
        if i:
            g = gz @ params.weights[i].T
    return grads


def sgd_step(params: ModelParams, grads: ModelParams, state: OptimizerState):
    """One momentum step: ``v <- m v + g``; ``theta <- theta - lr * mult * v``."""
    if not grads.all_finite():
        raise NumericalError("non-finite gradient passed to sgd_step")
    new_p, new_v = params.copy(), state.velocity.copy()
    for i, mult in enumerate(state.multipliers):
        step = state.lr * mult
        for P, V, G in ((new_p.weights, new_v.weights, grads.weights),
                        (new_p.biases, new_v.biases, grads.biases)):
            if V[i].shape != G[i].shape:
                raise ContractError(f"layer {i}: gradient shape {G[i].shape} != {V[i].shape}")
            V[i] = state.momentum * V[i] + G[i]
            P[i] = P[i] - step * V[i]
    return new_p, OptimizerState(new_v, state.lr, state.momentum, list(state.multipliers))


def save_checkpoint(params: ModelParams, path) -> None:
    """Write ``magic | u32 version | u32 header length | JSON header | float64 LE data``.

    Arrays follow in layer order (W0, b0, W1, b1, ...), each row-major.
    """
    header = json.dumps({"sizes": params.sizes, "activation": params.activation},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for a in params.arrays():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ContractError(f"{path} is not a model checkpoint")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    sizes = header["sizes"]
    data = np.frombuffer(raw, dtype="<f8", offset=16 + hlen).astype(np.float64)
    expected = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
    if data.size != expected:
        raise ContractError(f"checkpoint holds {data.size} values, layer sizes need {expected}")
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(data[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        biases.append(data[pos:pos + fan_out].copy())
        pos += fan_out
    return ModelParams(weights, biases, header["activation"])
