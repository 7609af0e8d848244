"""Pseudo labels, class weights, the joint objective and the training loop.

The joint objective on a source/target mini-batch pair is

    L = L_s + w*gamma * MMD2_weighted + w*lambda * MMD2_conditional

with both MMD terms evaluated on the model's last hidden layer and ``w``
the warm-up weight.  Target pseudo labels and their soft confidences are
refreshed every ``n_p`` iterations from the current model.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Iterable

import numpy as np

from . import mmd as _mmd
from .data import Dataset, EvalLabels, minibatch_stream
from .errors import ContractError, DegenerateInputError, NumericalError
from .kernels import KernelSpec, default_spec
from .mmd import ClassWeights
from .model import (
    ModelParams,
    OptimizerState,
    backward,
    forward,
    init_params,
    sgd_step,
    softmax_loss_and_grad,
)

__all__ = [
    "PseudoLabelTable",
    "TrainConfig",
    "JointLoss",
    "EvalReport",
    "TrainResult",
    "assign_pseudo_labels",
    "compute_class_weights",
    "warmup_weight",
    "joint_loss",
    "train_ecan",
    "train_source_only",
    "evaluate",
    "sensitivity_grid",
    "run_ablation",
    "GAMMA_GRID",
    "LAMBDA_GRID",
    "ABLATIONS",
]

GAMMA_GRID = (0.0, 0.01, 0.03, 0.05, 0.1, 0.3, 0.5, 1.0)
LAMBDA_GRID = (0.0, 0.001, 0.01, 0.1)

# name -> (reweight_on, condition_on)
ABLATIONS = {
    "mmd": (False, False),
    "reweight": (True, False),
    "condition": (False, True),
    "reweight+condition": (True, True),
}


@dataclass(frozen=True)
class PseudoLabelTable:
    """Hard pseudo labels and soft confidences for every target sample."""

    labels: np.ndarray
    confidences: np.ndarray
    iteration: int = 0

    @property
    def n_classes(self) -> int:
        return self.confidences.shape[1]

    def soft_mass(self) -> np.ndarray:
        """Mean confidence per class (the estimated target prior)."""
        return self.confidences.mean(axis=0)


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.3
    lam: float = 0.1
    lr: float = 0.01
    momentum: float = 0.9
    n_p: int = 50
    batch_source: int = 64
    batch_target: int = 64
    iterations: int = 1000
    seed: int = 0
    reweight: bool = True
    condition: bool = True
    warmup: bool = True
    hidden: tuple[int, ...] = (64,)
    activation: str = "tanh"
    classifier_mult: float = 10.0
    alpha_max: float = 10.0
    force_unit_alpha: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        checks = [
            (self.gamma >= 0, "gamma must be >= 0"),
            (self.lam >= 0, "lam must be >= 0"),
            (self.lr > 0, "lr must be > 0"),
            (0 <= self.momentum < 1, "momentum must lie in [0, 1)"),
            (self.n_p >= 1, "n_p must be >= 1"),
            (self.batch_source >= 2, "batch_source must be >= 2"),
            (self.batch_target >= 2, "batch_target must be >= 2"),
            (self.iterations >= 1, "iterations must be >= 1"),
            (self.alpha_max > 0, "alpha_max must be > 0"),
            (all(h >= 1 for h in self.hidden), "hidden widths must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ContractError(msg)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def variant(self, name: str) -> "TrainConfig":
        """Copy with the ablation flags of ``name`` (see ``ABLATIONS``)."""
        reweight, condition = ABLATIONS[name]
        return replace(self, reweight=reweight, condition=condition)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class JointLoss:
    loss: float
    grads: ModelParams
    source_loss: float
    weighted_mmd: float
    conditional_mmd: float
    skipped: list[int] = field(default_factory=list)
    conditional_degenerate: bool = False


@dataclass
class EvalReport:
    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict]
    table: PseudoLabelTable
    alpha: ClassWeights


def assign_pseudo_labels(params: ModelParams, Xt, iteration: int = 0) -> PseudoLabelTable:
    """Model probabilities as confidences; argmax (lowest index on ties) as label."""
    _, _, probs = forward(params, Xt)
    return PseudoLabelTable(np.argmax(probs, axis=1), probs, iteration)


def compute_class_weights(table: PseudoLabelTable, source_counts) -> ClassWeights:
    """``alpha_l = (mean_i delta_i(l)) / (N_s^l / N_s)``.

    Classes without source samples get ``alpha_l = 0`` and are listed in
    ``ClassWeights.absent``.
    """
    if table.confidences.size == 0:
        raise ContractError("empty pseudo-label table")
    counts = np.asarray(source_counts, dtype=np.float64)
    L = table.n_classes
    if counts.shape != (L,):
        raise ContractError(f"need {L} source class counts, got shape {counts.shape}")
    if np.any(counts < 0) or counts.sum() <= 0:
        raise ContractError("source class counts must be non-negative with a positive total")
    source_freq = counts / counts.sum()
    target_mass = table.soft_mass()
    alpha = np.zeros(L)
    present = counts > 0
    alpha[present] = target_mass[present] / source_freq[present]
    return ClassWeights(alpha, tuple(int(c) for c in np.flatnonzero(~present)))


def warmup_weight(p: float) -> float:
    """``2 / (1 + exp(-10 p)) - 1`` for training progress ``p`` in [0, 1]."""
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"progress must lie in [0, 1], got {p}")
    return 2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0


def joint_loss(params: ModelParams, Xs, ys, Xt, yt_pseudo, alpha: ClassWeights, spec: KernelSpec,
               gamma_eff: float, lam_eff: float, *, reweight: bool = True, condition: bool = True,
               source_weight: float = 1.0) -> JointLoss:
    """Scalar objective and its gradients with respect to every parameter.

    ``yt_pseudo`` are the hard pseudo labels of the rows of ``Xt``.  With
    ``reweight=False`` the marginal term is the plain unbiased MMD.  When no
    class can form a conditional term, that term is 0 and
    ``conditional_degenerate`` is set.  ``source_weight`` scales the
    softmax term (1 in training).
    """
    fs, logits_s, _ = forward(params, Xs)
    ft, _, _ = forward(params, Xt)
    ls, dlogits = softmax_loss_and_grad(logits_s, ys)
    dfs = np.zeros_like(fs)
    dft = np.zeros_like(ft)

    wm, gs, gt = _mmd.weighted_value_and_grad(fs, ys, alpha if reweight else None, ft, spec)
    dfs += gamma_eff * gs
    dft += gamma_eff * gt

    cm, skipped, degenerate = 0.0, [], False
    if condition:
        try:
            terms, gs, gt = _mmd.conditional_value_and_grad(fs, ys, ft, yt_pseudo, spec)
        except DegenerateInputError:
            degenerate = True
        else:
            cm, skipped = terms.value, terms.skipped
            dfs += lam_eff * gs
            dft += lam_eff * gt

    loss = source_weight * ls + gamma_eff * wm + lam_eff * cm
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite joint loss (L_s={ls}, weighted={wm}, conditional={cm})")
    grads = backward(params, Xs, dfs, source_weight * dlogits)
    gt_params = backward(params, Xt, dft, None)
    for i in range(len(grads.weights)):
        grads.weights[i] = grads.weights[i] + gt_params.weights[i]
        grads.biases[i] = grads.biases[i] + gt_params.biases[i]
    return JointLoss(loss, grads, ls, wm, cm, skipped, degenerate)


def evaluate(params: ModelParams, X, labels, n_classes: int | None = None) -> EvalReport:
    """Accuracy, per-class recall and the true x predicted confusion matrix."""
    if isinstance(labels, EvalLabels):
        n_classes = labels.n_classes if n_classes is None else n_classes
        labels = labels.reveal()
    y = np.asarray(labels)
    X = np.asarray(X, dtype=np.float64)
    if y.size == 0:
        raise ContractError("cannot evaluate on an empty set")
    L = params.n_classes if n_classes is None else n_classes
    if y.min() < 0 or y.max() >= L:
        raise ContractError(f"labels must lie in [0, {L})")
    _, _, probs = forward(params, X)
    pred = np.argmax(probs, axis=1)
    conf = np.zeros((L, L), dtype=np.int64)
    np.add.at(conf, (y, pred), 1)
    rows = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(rows > 0, np.diag(conf) / np.maximum(rows, 1), np.nan)
    return EvalReport(float(np.mean(pred == y)), per_class, conf)


def _check_domains(config, source, target):
    ys = source.require_labels("source domain")
    if target.labeled:
        raise ContractError("target domain must be unlabeled; split its labels off with withhold_labels()")
    if source.D != target.D:
        raise ContractError(f"source D={source.D} but target D={target.D}")
    if config.batch_source > source.N or config.batch_target > target.N:
        raise ContractError("batch size exceeds dataset size")
    counts = np.bincount(ys, minlength=source.n_classes)
    small = [c for c, n in enumerate(counts) if 0 < n < 2]
    if small:
        raise ContractError(f"source classes {small} have fewer than 2 samples")
    return ys, counts


def _init(config, source):
    rng = np.random.default_rng([config.seed, 0x1])
    sizes = [source.D, *config.hidden, source.n_classes]
    params = init_params(sizes, rng, config.activation)
    return params, OptimizerState.create(params, config.lr, config.momentum, config.classifier_mult)


def _evaluator(params, target, eval_labels):
    if eval_labels is None:
        return None
    return evaluate(params, target.X, eval_labels).accuracy


def train_ecan(config: TrainConfig, source: Dataset, target: Dataset,
               eval_labels: EvalLabels | None = None,
               on_record: Callable[[dict], None] | None = None) -> TrainResult:
    """Run the alternating pseudo-label / SGD loop for ``config.iterations`` steps.

    ``eval_labels`` only feed the ``target_accuracy`` field of the history;
    training never sees them.  ``on_record`` receives each history record
    as it is produced.
    """
    ys_all, counts = _check_domains(config, source, target)
    params, opt = _init(config, source)
    L = source.n_classes
    stream = minibatch_stream(source, target, config.batch_source, config.batch_target, config.seed)

    table = assign_pseudo_labels(params, target.X, 0)
    history = []
    T = config.iterations
    for k in range(1, T + 1):
        if k % config.n_p == 0:
            table = assign_pseudo_labels(params, target.X, k)
        if config.force_unit_alpha:
            alpha = ClassWeights.ones(L)
        else:
            raw = compute_class_weights(table, counts)
            alpha = ClassWeights(np.clip(raw.alpha, 0.0, config.alpha_max), raw.absent)

        w = warmup_weight((k - 1) / max(T - 1, 1)) if config.warmup else 1.0
        si, ti = next(stream)
        Xs, ys, Xt = source.X[si], ys_all[si], target.X[ti]
        fs, _, _ = forward(params, Xs)
        ft, _, _ = forward(params, Xt)
        spec = default_spec(fs, ft)
        res = joint_loss(params, Xs, ys, Xt, table.labels[ti], alpha, spec,
                         w * config.gamma, w * config.lam,
                         reweight=config.reweight, condition=config.condition)
        params, opt = sgd_step(params, res.grads, opt)
        if not params.all_finite():
            raise NumericalError(f"parameters became non-finite at iteration {k}")

        rec = {
            "iteration": k,
            "loss": res.loss,
            "source_loss": res.source_loss,
            "weighted_mmd": res.weighted_mmd,
            "conditional_mmd": res.conditional_mmd,
            "w": w,
            "alpha": [float(a) for a in alpha.alpha],
            "skipped_classes": res.skipped,
        }
        acc = _evaluator(params, target, eval_labels)
        if acc is not None:
            rec["target_accuracy"] = acc
        history.append(rec)
        if on_record is not None:
            on_record(rec)

    table = assign_pseudo_labels(params, target.X, T)
    final_alpha = compute_class_weights(table, counts)
    return TrainResult(params, history, table, final_alpha)


def train_source_only(config: TrainConfig, source: Dataset, target: Dataset,
                      eval_labels: EvalLabels | None = None) -> TrainResult:
    """Softmax-only training on the same initialization and batch schedule."""
    ys_all, counts = _check_domains(config, source, target)
    params, opt = _init(config, source)
    stream = minibatch_stream(source, target, config.batch_source, config.batch_target, config.seed)
    history = []
    for k in range(1, config.iterations + 1):
        si, _ = next(stream)
        _, logits, _ = forward(params, source.X[si])
        ls, dlogits = softmax_loss_and_grad(logits, ys_all[si])
        params, opt = sgd_step(params, backward(params, source.X[si], None, dlogits), opt)
        rec = {"iteration": k, "loss": ls, "source_loss": ls}
        acc = _evaluator(params, target, eval_labels)
        if acc is not None:
            rec["target_accuracy"] = acc
        history.append(rec)
    table = assign_pseudo_labels(params, target.X, config.iterations)
    return TrainResult(params, history, table, compute_class_weights(table, counts))


def sensitivity_grid(config: TrainConfig, source: Dataset, target: Dataset, eval_labels: EvalLabels,
                     gammas: Iterable[float] = GAMMA_GRID,
                     lambdas: Iterable[float] = LAMBDA_GRID) -> list[dict]:
    """Final target accuracy for every (gamma, lambda) pair, row-major."""
    rows = []
    for g in gammas:
        for lam in lambdas:
            res = train_ecan(replace(config, gamma=g, lam=lam), source, target)
            acc = evaluate(res.params, target.X, eval_labels).accuracy
            rows.append({"gamma": g, "lambda": lam, "target_accuracy": acc})
    return rows


def run_ablation(config: TrainConfig, source: Dataset, target: Dataset, eval_labels: EvalLabels,
                 variants: Iterable[str] = ("reweight", "condition", "reweight+condition")) -> dict:
    """Final target accuracy of the source-only model and each ablation variant."""
    out = {"source-only": evaluate(train_source_only(config, source, target).params,
                                   target.X, eval_labels).accuracy}
    for name in variants:
        res = train_ecan(config.variant(name), source, target)
        out[name] = evaluate(res.params, target.X, eval_labels).accuracy
    return out
