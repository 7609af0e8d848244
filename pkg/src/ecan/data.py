"""Feature files, synthetic two-domain generators and mini-batch streams."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ContractError, FeatureParseError

__all__ = [
    "Dataset",
    "EvalLabels",
    "ShiftConfig",
    "load_features",
    "save_features",
    "synth_two_domain",
    "shift_a",
    "class_histogram",
    "minibatch_stream",
    "stratified_order",
]

UNLABELED = "?"


@dataclass(frozen=True)
class Dataset:
    """An immutable feature matrix with optional integer class labels."""

    X: np.ndarray
    labels: np.ndarray | None = None
    domain: str = ""
    provenance: str = ""
    n_classes: int | None = None
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ContractError(f"features must be a non-empty N x D matrix, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ContractError("features contain non-finite values")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        if self.labels is not None:
            y = np.array(self.labels)
            if y.shape != (X.shape[0],):
                raise ContractError(f"{y.size} labels for {X.shape[0]} samples")
            if y.size and not np.issubdtype(y.dtype, np.integer):
                raise ContractError("labels must be integers")
            y = y.astype(np.int64)
            if y.min() < 0:
                raise ContractError("labels must be non-negative")
            L = self.n_classes if self.n_classes is not None else int(y.max()) + 1
            if y.max() >= L:
                raise ContractError(f"label {int(y.max())} outside [0, {L})")
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)
            object.__setattr__(self, "n_classes", L)
        if self.ids is not None:
            if len(self.ids) != X.shape[0]:
                raise ContractError(f"{len(self.ids)} ids for {X.shape[0]} samples")
            object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def D(self) -> int:
        return self.X.shape[1]

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def require_labels(self, role: str = "dataset") -> np.ndarray:
        if self.labels is None:
            raise ContractError(f"{role} {self.domain!r} has no labels")
        return self.labels

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.X[idx],
            None if self.labels is None else self.labels[idx],
            self.domain,
            self.provenance,
            self.n_classes,
            None if self.ids is None else tuple(self.ids[i] for i in idx),
        )

    def withhold_labels(self) -> tuple["Dataset", "EvalLabels | None"]:
        """Split into an unlabeled dataset and its evaluation-only labels."""
        unlabeled = Dataset(self.X, None, self.domain, self.provenance, None, self.ids)
        if self.labels is None:
            return unlabeled, None
        return unlabeled, EvalLabels(self.labels, self.n_classes)


class EvalLabels:
    """Target labels kept apart from training; only evaluators read them."""

    __slots__ = ("_y", "n_classes")

    def __init__(self, labels, n_classes: int):
        y = np.array(labels, dtype=np.int64)
        y.setflags(write=False)
        self._y = y
        self.n_classes = int(n_classes)

    def reveal(self) -> np.ndarray:
        return self._y

    def __len__(self):
        return self._y.size

    def __repr__(self):
        return f"EvalLabels(n={self._y.size}, n_classes={self.n_classes})"


@dataclass(frozen=True)
class ShiftConfig:
    """Per-class Gaussian clusters for a source and a target domain.

    ``source_means`` / ``target_means`` are L x D; both domains share the
    isotropic per-class standard deviation ``scale``.
    """

    source_means: np.ndarray
    target_means: np.ndarray
    source_priors: np.ndarray
    target_priors: np.ndarray
    n_source: int = 2000
    n_target: int = 2000
    scale: float = 1.0
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        for attr in ("source_means", "target_means", "source_priors", "target_priors"):
            object.__setattr__(self, attr, np.array(getattr(self, attr), dtype=np.float64))
        ms, mt = self.source_means, self.target_means
        if ms.ndim != 2 or ms.shape != mt.shape:
            raise ContractError(f"source/target means must both be L x D, got {ms.shape}, {mt.shape}")
        L = ms.shape[0]
        for attr in ("source_priors", "target_priors"):
            p = getattr(self, attr)
            if p.shape != (L,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ContractError(f"{attr} must be a probability vector of length {L}: {p}")
        if self.n_source < 1 or self.n_target < 1:
            raise ContractError("sample counts must be >= 1")
        if not self.scale > 0:
            raise ContractError("scale must be positive")

    @property
    def n_classes(self) -> int:
        return self.source_means.shape[0]

    @property
    def dim(self) -> int:
        return self.source_means.shape[1]

    def prior_ratio(self) -> np.ndarray:
        """True ``P_t(y) / P_s(y)`` (inf where the source prior is 0)."""
        with np.errstate(divide="ignore"):
            return self.target_priors / self.source_priors


def shift_a(seed: int = 0, n_classes: int = 4, dim: int = 16, separation: float = 3.0,
            shift: float = 1.5, source_priors=(0.7, 0.1, 0.1, 0.1), target_priors=None,
            n_per_domain: int = 2000, scale: float = 0.5) -> ShiftConfig:
    """The default acceptance scenario: imbalanced source, uniform target,
    and every target class mean displaced by ``shift``.

    Class means sit at ``separation / sqrt(2)`` along the first ``n_classes``
    axes, so any two are ``separation`` apart.  All classes are translated
    by the same vector: a seeded random unit direction inside the span of
    the class means (the subspace the classifier actually relies on; a
    translation along the remaining nuisance axes is ignored by any
    reasonable classifier and would not be a real adaptation problem).
    """
    if n_classes > dim:
        raise ContractError("shift-A places class means on coordinate axes; need n_classes <= dim")
    rng = np.random.default_rng([seed, 0xA])
    means = np.zeros((n_classes, dim))
    means[np.arange(n_classes), np.arange(n_classes)] = separation / np.sqrt(2.0)
    direction = np.zeros(dim)
    direction[:n_classes] = rng.standard_normal(n_classes)
    direction /= np.linalg.norm(direction)
    if target_priors is None:
        target_priors = np.full(n_classes, 1.0 / n_classes)
    return ShiftConfig(means, means + shift * direction, np.asarray(source_priors), np.asarray(target_priors),
                       n_per_domain, n_per_domain, scale, seed, "shift-A")


def synth_two_domain(config: ShiftConfig) -> tuple[Dataset, Dataset, EvalLabels]:
    """Sample source (labeled) and target (unlabeled) datasets.

    The target's true labels come back separately as :class:`EvalLabels`.
    """
    rng = np.random.default_rng([config.seed, 0x5])
    L = config.n_classes

    def draw(n, priors, means, domain):
        y = rng.choice(L, size=n, p=priors)
        X = means[y] + config.scale * rng.standard_normal((n, config.dim))
        return X, y

    Xs, ys = draw(config.n_source, config.source_priors, config.source_means, "source")
    Xt, yt = draw(config.n_target, config.target_priors, config.target_means, "target")
    prov = f"synth:{config.name}?seed={config.seed}"
    source = Dataset(Xs, ys, "source", prov, L)
    target = Dataset(Xt, None, "target", prov)
    return source, target, EvalLabels(yt, L)


def class_histogram(ds: Dataset, n_classes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-class counts and frequencies (length ``n_classes``, zeros kept)."""
    y = ds.require_labels()
    L = n_classes if n_classes is not None else ds.n_classes
    counts = np.bincount(y, minlength=L)
    if counts.size > L:
        raise ContractError(f"labels exceed n_classes={L}")
    return counts, counts / counts.sum()


def stratified_order(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """A permutation in which every class is spread evenly.

    Each class is shuffled, its members get keys ``(rank + u_c) / n_c`` with a
    random per-class offset ``u_c``, and samples are sorted by key.  Any
    window of ``n`` consecutive entries then holds ``n * n_c / N`` members
    of class ``c`` up to rounding.
    """
    labels = np.asarray(labels)
    keys = np.empty(labels.size)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        keys[idx] = (np.arange(idx.size) + rng.uniform()) / idx.size
    return np.lexsort((labels, keys))


def minibatch_stream(source: Dataset, target: Dataset, n_s: int, n_t: int,
                     seed: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Endless deterministic stream of ``(source_idx, target_idx)`` batches.

    Source epochs use :func:`stratified_order` when labels exist; target
    epochs are uniform shuffles.  Partial final batches are dropped.
    """
    if not 1 <= n_s <= source.N:
        raise ContractError(f"source batch size {n_s} not in [1, {source.N}]")
    if not 1 <= n_t <= target.N:
        raise ContractError(f"target batch size {n_t} not in [1, {target.N}]")
    ss = np.random.SeedSequence(seed)
    rng_s, rng_t = (np.random.default_rng(s) for s in ss.spawn(2))

    def epochs(n, size, rng, labels):
        while True:
            order = stratified_order(labels, rng) if labels is not None else rng.permutation(n)
            for b in range(n // size):
                yield order[b * size:(b + 1) * size]

    return zip(epochs(source.N, n_s, rng_s, source.labels), epochs(target.N, n_t, rng_t, None))


def save_features(ds: Dataset, path) -> None:
    """Write ``id,domain,label,f0..f{D-1}``; floats use shortest round-trip repr."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "domain", "label"] + [f"f{j}" for j in range(ds.D)])
    ids = ds.ids if ds.ids is not None else [str(i) for i in range(ds.N)]
    for i in range(ds.N):
        lab = UNLABELED if ds.labels is None else str(int(ds.labels[i]))
        w.writerow([ids[i], ds.domain, lab] + [repr(float(v)) for v in ds.X[i]])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_features(path, domain: str | None = None, n_classes: int | None = None) -> Dataset:
    """Parse a feature CSV.  ``domain`` keeps only rows with that tag.

    Errors carry the 1-based line number of the offending row.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FeatureParseError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FeatureParseError("empty file", 1)
    header = [h.strip() for h in rows[0]]
    if header[:3] != ["id", "domain", "label"] or len(header) < 4:
        raise FeatureParseError("header must start with id,domain,label followed by feature columns", 1)
    D = len(header) - 3
    if header[3:] != [f"f{j}" for j in range(D)]:
        raise FeatureParseError("feature columns must be named f0..f{D-1} in order", 1)
    ids, domains, labels, feats, linenos = [], [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != D + 3:
            raise FeatureParseError(f"expected {D + 3} fields, found {len(row)}", lineno)
        if domain is not None and row[1] != domain:
            continue
        tok = row[2].strip()
        if tok == UNLABELED:
            labels.append(None)
        elif tok.isdigit():
            labels.append(int(tok))
        else:
            raise FeatureParseError(f"unknown label token {tok!r}", lineno)
        try:
            vals = [float(c) for c in row[3:]]
        except ValueError as exc:
            raise FeatureParseError(f"non-numeric feature: {exc}", lineno) from None
        if not all(np.isfinite(vals)):
            raise FeatureParseError("non-finite feature value", lineno)
        ids.append(row[0])
        domains.append(row[1])
        feats.append(vals)
        linenos.append(lineno)
    if not feats:
        raise FeatureParseError("no data rows" + (f" for domain {domain!r}" if domain else ""))
    known = [lab is not None for lab in labels]
    if any(known) and not all(known):
        first = known.index(not known[0])
        raise FeatureParseError("file mixes labeled and unlabeled rows", linenos[first])
    tag = domain if domain is not None else "+".join(dict.fromkeys(domains))
    y = np.array(labels, dtype=np.int64) if all(known) else None
    return Dataset(np.array(feats), y, tag, str(path), n_classes, tuple(ids))
