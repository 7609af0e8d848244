"""Command-line entry point: ``ecan <command> [--key value ...]``.

Commands: train, eval, mmd, probe, synth, gradcheck, sweep.

Settings resolve as built-in defaults < ``--config`` file < flags.  Config
files hold ``key = value`` lines with ``#`` comments; keys are the long
flag names with ``_`` or ``-``.  Commands that write an output directory
also write ``run.resolved`` there, listing every resolved setting.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import mmd as _mmd
from .adaptation import (
    GAMMA_GRID,
    LAMBDA_GRID,
    TrainConfig,
    evaluate,
    sensitivity_grid,
    train_ecan,
)
from .data import Dataset, EvalLabels, class_histogram, load_features, save_features, shift_a, synth_two_domain
from .errors import ContractError, FeatureParseError, NumericalError
from .gradcheck import run_suite
from .kernels import KernelSpec, default_spec
from .mmd import ClassWeights
from .model import forward, load_checkpoint, save_checkpoint
from .probe import SoftmaxTrainer, cross_dataset_matrix, dataset_recognition

__all__ = ["main", "run_cli", "parse_config_text", "UsageError", "SYNTH_SCENARIOS"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    """Bad command line or config file."""


# --------------------------------------------------------------------------
# value parsing


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_tuple(s: str) -> tuple[int, ...]:
    s = s.strip()
    return tuple(int(p) for p in s.split(",") if p.strip()) if s else ()


def _float_tuple(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.split(",") if p.strip())


def _str_list(s: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in s.split(",") if p.strip())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class Setting:
    parse: Callable[[str], object]
    default: object
    help: str = ""


_TRAIN_TYPES = {
    "gamma": float, "lam": float, "lr": float, "momentum": float, "n_p": int,
    "batch_source": int, "batch_target": int, "iterations": int, "reweight": _bool,
    "condition": _bool, "warmup": _bool, "hidden": _int_tuple, "activation": str,
    "classifier_mult": float, "alpha_max": float, "force_unit_alpha": _bool,
}


def _train_settings() -> dict[str, Setting]:
    defaults = TrainConfig()
    out = {}
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        out[f.name] = Setting(_TRAIN_TYPES[f.name], getattr(defaults, f.name), f"TrainConfig.{f.name}")
    return out


_COMMON = {"seed": Setting(int, 0, "random seed")}
_DOMAINS = {
    "source": Setting(str, None, "source features: CSV path or synth:<name>"),
    "target": Setting(str, None, "target features: CSV path or synth:<name>"),
}

SCHEMAS: dict[str, dict[str, Setting]] = {
    "train": {**_COMMON, **_DOMAINS, **_train_settings(),
              "out": Setting(str, None, "output directory")},
    "eval": {**_COMMON, **_DOMAINS,
             "checkpoint": Setting(str, None, "model checkpoint"),
             "labels": Setting(str, None, "id,label CSV of target labels (e.g. synth's target_labels.csv)"),
             "out": Setting(str, None, "output directory (confusion matrix)"),
             "export_projection": Setting(str, None, "write a 2-D PCA projection CSV here")},
    "mmd": {**_COMMON, **_DOMAINS,
            "bandwidth": Setting(float, None, "single-kernel sigma (default: median ladder)")},
    "probe": {**_COMMON,
              "mode": Setting(str, "recognition", "recognition | cross"),
              "data": Setting(_str_list, (), "comma-separated datasets (paths or synth: URIs)"),
              "n_train": Setting(int, 200, "recognition: training samples per dataset"),
              "n_test": Setting(int, 100, "recognition: test samples per dataset"),
              "trials": Setting(int, 10, "recognition: number of trials"),
              "epochs": Setting(int, 20, "classifier epochs"),
              "probe_lr": Setting(float, 0.05, "classifier learning rate"),
              "out": Setting(str, None, "output directory")},
    "synth": {**_COMMON,
              "name": Setting(str, "shift-A", "scenario name"),
              "out": Setting(str, None, "output directory")},
    "gradcheck": {**_COMMON,
                  "instances": Setting(int, 50, "number of random instances"),
                  "tolerance": Setting(float, 1e-5, "maximum allowed relative error")},
    "sweep": {**_COMMON, **_DOMAINS, **_train_settings(),
              "gammas": Setting(_float_tuple, GAMMA_GRID, "gamma grid"),
              "lambdas": Setting(_float_tuple, LAMBDA_GRID, "lambda grid"),
              "out": Setting(str, None, "output directory")},
}
REQUIRED = {
    "train": ("source", "target", "out"),
    "eval": ("checkpoint", "target"),
    "mmd": ("source", "target"),
    "probe": ("data",),
    "synth": ("out",),
    "gradcheck": (),
    "sweep": ("source", "target", "out"),
}


def parse_config_text(text: str, schema: dict[str, Setting]) -> dict[str, object]:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Unknown keys raise."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in schema:
            raise UsageError(f"config line {n}: unknown key {key!r}")
        try:
            out[key] = schema[key].parse(value)
        except ValueError as exc:
            raise UsageError(f"config line {n}: bad value for {key}: {exc}") from None
    return out


def _resolve(command: str, ns: argparse.Namespace) -> dict[str, object]:
    schema = SCHEMAS[command]
    resolved = {k: s.default for k, s in schema.items()}
    if ns.config:
        try:
            text = Path(ns.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        resolved.update(parse_config_text(text, schema))
    for key, setting in schema.items():
        raw = getattr(ns, key)
        if raw is not None:
            try:
                resolved[key] = setting.parse(raw)
            except ValueError as exc:
                raise UsageError(f"bad value for --{key.replace('_', '-')}: {exc}") from None
    missing = [k for k in REQUIRED[command] if resolved.get(k) in (None, ())]
    if missing:
        raise UsageError(f"{command}: missing required setting(s): {', '.join(missing)}")
    return resolved


def _write_resolved(command: str, resolved: dict, out: Path) -> None:
    lines = [f"command = {command}"] + [f"{k} = {_fmt(resolved[k])}" for k in sorted(resolved)]
    (out / "run.resolved").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _train_config(resolved: dict) -> TrainConfig:
    kw = {f.name: resolved[f.name] for f in fields(TrainConfig) if f.name in resolved}
    try:
        return TrainConfig(**kw)
    except ContractError as exc:
        raise UsageError(str(exc)) from None


# --------------------------------------------------------------------------
# dataset addressing

SYNTH_SCENARIOS = {
    "shift-A": lambda seed: shift_a(seed),
    "no-shift": lambda seed: shift_a(seed, shift=0.0, source_priors=(0.25,) * 4),
}


def _synth(name: str, seed: int):
    if name not in SYNTH_SCENARIOS:
        raise ContractError(f"unknown synthetic scenario {name!r}; choose from {sorted(SYNTH_SCENARIOS)}")
    return synth_two_domain(SYNTH_SCENARIOS[name](seed))


def _load(uri: str, role: str, seed: int) -> tuple[Dataset, EvalLabels | None]:
    """Resolve a CLI dataset reference.

    ``synth:<name>`` picks the source or target domain of a scenario by
    ``role``; files are read as feature CSVs.  Labels found on a target
    are split off for evaluation only.
    """
    if uri.startswith("synth:"):
        source, target, labels = _synth(uri[len("synth:"):], seed)
        return (source, None) if role == "source" else (target, labels)
    ds = load_features(uri)
    if role == "target":
        return ds.withhold_labels()
    return ds, None


def _load_labeled(uri: str, seed: int, role: str = "source") -> Dataset:
    """Dataset with every label available (analysis commands, not training)."""
    if uri.startswith("synth:"):
        source, target, labels = _synth(uri[len("synth:"):], seed)
        if role == "source":
            return source
        return Dataset(target.X, labels.reveal(), target.domain, target.provenance, labels.n_classes)
    return load_features(uri)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands


def cmd_train(r: dict) -> int:
    """Train a model on a source/target pair; writes metrics, checkpoint and summary."""
    config = _train_config(r)
    source, _ = _load(r["source"], "source", r["seed"])
    target, labels = _load(r["target"], "target", r["seed"])
    out = _out_dir(r["out"])
    _write_resolved("train", r, out)
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        def emit(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()

        result = train_ecan(config, source, target, labels, on_record=emit)
    save_checkpoint(result.params, out / "model.ckpt")
    summary = {"final_alpha": [float(a) for a in result.alpha.alpha]}
    if labels is not None:
        summary["target_accuracy"] = evaluate(result.params, target.X, labels).accuracy
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    for k, v in summary.items():
        print(f"{k}: {v}")
    return EXIT_OK


def _write_confusion(conf: np.ndarray, path: Path) -> None:
    L = conf.shape[0]
    lines = ["true\\pred," + ",".join(str(j) for j in range(L))]
    lines += [f"{i}," + ",".join(str(int(v)) for v in conf[i]) for i in range(L)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_labels(path, n: int, n_classes: int) -> EvalLabels:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "id,label":
        raise FeatureParseError("label file must start with the header 'id,label'", 1)
    y = []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 2 or not parts[1].strip().isdigit():
            raise FeatureParseError(f"expected 'id,label' with an integer label, got {ln!r}", lineno)
        y.append(int(parts[1]))
    if len(y) != n:
        raise ContractError(f"{len(y)} labels for {n} target samples")
    return EvalLabels(y, n_classes)


def pca_projection(F: np.ndarray) -> np.ndarray:
    """Project rows of ``F`` onto its top-2 principal directions.

    Each direction's sign is fixed so its largest-magnitude loading is positive.
    """
    C = F - F.mean(axis=0)
    _, _, Vt = np.linalg.svd(C, full_matrices=False)
    V = Vt[:2].T.copy()
    if V.shape[1] < 2:
        V = np.hstack([V, np.zeros((V.shape[0], 2 - V.shape[1]))])
    for j in range(V.shape[1]):
        k = np.argmax(np.abs(V[:, j]))
        if V[k, j] < 0:
            V[:, j] = -V[:, j]
    return C @ V


def cmd_eval(r: dict) -> int:
    """Score a checkpoint on labeled target features."""
    params = load_checkpoint(r["checkpoint"])
    target, labels = _load(r["target"], "target", r["seed"])
    if r["labels"]:
        labels = _read_labels(r["labels"], target.N, params.n_classes)
    if labels is None:
        raise ContractError("eval needs target labels: a labeled target file or --labels")
    rep = evaluate(params, target.X, labels)
    print(f"accuracy: {rep.accuracy:.6f}")
    for l, acc in enumerate(rep.per_class):
        print(f"class {l}: {acc:.6f}" if not math.isnan(acc) else f"class {l}: n/a")
    if r["out"]:
        out = _out_dir(r["out"])
        _write_resolved("eval", r, out)
        _write_confusion(rep.confusion, out / "confusion.csv")
    if r["export_projection"]:
        parts = []
        if r["source"]:
            source, _ = _load(r["source"], "source", r["seed"])
            parts.append(("source", source.X, source.labels))
        parts.append(("target", target.X, labels.reveal()))
        feats = [forward(params, X)[0] for _, X, _ in parts]
        P = pca_projection(np.vstack(feats))
        rows, start = ["domain,label,p0,p1"], 0
        for (dom, X, y), f in zip(parts, feats):
            for i in range(f.shape[0]):
                lab = "?" if y is None else str(int(y[i]))
                rows.append(f"{dom},{lab},{float(P[start + i, 0])!r},{float(P[start + i, 1])!r}")
            start += f.shape[0]
        Path(r["export_projection"]).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_mmd(r: dict) -> int:
    """Print the four MMD^2 estimators between two feature sets."""
    source = _load_labeled(r["source"], r["seed"])
    target = _load_labeled(r["target"], r["seed"], "target")
    spec = KernelSpec.single(r["bandwidth"]) if r["bandwidth"] else default_spec(source.X, target.X)
    print(f"biased: {_mmd.mmd2_biased(source.X, target.X, spec):.6f}")
    print(f"unbiased: {_mmd.mmd2_unbiased(source.X, target.X, spec):.6f}")
    if source.labeled:
        L = max(source.n_classes, target.n_classes if target.labeled else 0)
        counts_s, freq_s = class_histogram(source, L)
        if target.labeled:
            _, freq_t = class_histogram(target, L)
            alpha = np.divide(freq_t, freq_s, out=np.zeros(L), where=counts_s > 0)
        else:
            alpha = np.ones(L)
        print(f"weighted: {_mmd.mmd2_weighted(source.X, source.labels, ClassWeights(alpha), target.X, spec):.6f}")
    else:
        print("weighted: n/a (source unlabeled)")
    if source.labeled and target.labeled:
        terms = _mmd.mmd2_conditional(source.X, source.labels, target.X, target.labels, spec)
        print(f"conditional: {terms.value:.6f}")
    else:
        print("conditional: n/a (needs labels on both sides)")
    return EXIT_OK


def cmd_probe(r: dict) -> int:
    """Dataset-recognition or cross-dataset probe."""
    datasets = [_load_labeled(u, r["seed"]) for u in r["data"]]
    trainer = SoftmaxTrainer(epochs=r["epochs"], lr=r["probe_lr"])
    out = _out_dir(r["out"]) if r["out"] else None
    if out:
        _write_resolved("probe", r, out)
    if r["mode"] == "recognition":
        acc, conf = dataset_recognition(datasets, r["n_train"], r["n_test"], r["trials"], r["seed"], trainer)
        print(f"recognition accuracy: {acc:.6f} (chance {1 / len(datasets):.6f})")
        if out:
            _write_confusion(conf, out / "recognition_confusion.csv")
    elif r["mode"] == "cross":
        names = [Path(u).stem if not u.startswith("synth:") else u for u in r["data"]]
        cm = cross_dataset_matrix(datasets, trainer, r["seed"], names)
        for name, d, m, p in zip(cm.names, cm.diagonal, cm.mean_others, cm.percent_drop):
            print(f"{name}: in-dataset {d:.4f}  mean-others {m:.4f}  drop {p:.0f}%")
        if out:
            cm.write_csv(out / "cross_matrix.csv")
            cm.write_summary(out / "cross_summary.csv")
    else:
        raise UsageError(f"unknown probe mode {r['mode']!r} (recognition | cross)")
    return EXIT_OK


def cmd_synth(r: dict) -> int:
    """Write a synthetic two-domain scenario as feature CSVs."""
    if r["name"] not in SYNTH_SCENARIOS:
        raise UsageError(f"unknown scenario {r['name']!r}; choose from {sorted(SYNTH_SCENARIOS)}")
    config = SYNTH_SCENARIOS[r["name"]](r["seed"])
    source, target, labels = synth_two_domain(config)
    out = _out_dir(r["out"])
    _write_resolved("synth", r, out)
    save_features(source, out / "source.csv")
    save_features(target, out / "target.csv")
    lines = ["id,label"] + [f"{i},{int(y)}" for i, y in enumerate(labels.reveal())]
    (out / "target_labels.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    gen = [f"name = {config.name}", f"seed = {config.seed}", f"scale = {config.scale!r}",
           f"n_source = {config.n_source}", f"n_target = {config.n_target}",
           f"source_priors = {_fmt(tuple(float(p) for p in config.source_priors))}",
           f"target_priors = {_fmt(tuple(float(p) for p in config.target_priors))}"]
    for l in range(config.n_classes):
        gen.append(f"source_mean_{l} = {_fmt(tuple(float(v) for v in config.source_means[l]))}")
        gen.append(f"target_mean_{l} = {_fmt(tuple(float(v) for v in config.target_means[l]))}")
    (out / "generator.cfg").write_text("\n".join(gen) + "\n", encoding="utf-8")
    print(f"wrote {source.N} source and {target.N} target samples to {out}")
    return EXIT_OK


def cmd_gradcheck(r: dict) -> int:
    """Finite-difference check of every analytic gradient."""
    worst = run_suite(instances=r["instances"], seed=r["seed"])
    for name, err in worst.items():
        print(f"{name}: {err:.3e}")
    top = max(worst.values())
    ok = top <= r["tolerance"]
    print(f"max relative error: {top:.3e} ({'ok' if ok else 'FAILED'}, tolerance {r['tolerance']:.0e})")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_sweep(r: dict) -> int:
    """Grid over gamma x lambda; writes a sensitivity table."""
    config = _train_config(r)
    source, _ = _load(r["source"], "source", r["seed"])
    target, labels = _load(r["target"], "target", r["seed"])
    if labels is None:
        raise ContractError("sweep scores each grid point on target labels; the target has none")
    out = _out_dir(r["out"])
    _write_resolved("sweep", r, out)
    rows = sensitivity_grid(config, source, target, labels, r["gammas"], r["lambdas"])
    lines = ["gamma,lambda,target_accuracy"] + [
        f"{row['gamma']!r},{row['lambda']!r},{row['target_accuracy']:.6f}" for row in rows]
    (out / "sensitivity.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    best = max(rows, key=lambda row: row["target_accuracy"])
    print(f"best gamma={best['gamma']} lambda={best['lambda']} accuracy={best['target_accuracy']:.6f}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "mmd": cmd_mmd,
    "probe": cmd_probe,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ecan", description="Class-weighted MMD domain adaptation toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name, help=(COMMANDS[name].__doc__ or name).strip().splitlines()[0])
        p.add_argument("--config", help="flat 'key = value' config file")
        for key, setting in schema.items():
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar="VALUE",
                           help=f"{setting.help} (default: {_fmt(setting.default) or 'none'})")
    return parser


def run_cli(argv=None) -> int:
    """Run one command; returns the process exit code."""
    try:
        ns = build_parser().parse_args(argv)
        if ns.command is None:
            raise UsageError("no command given; choose from " + ", ".join(COMMANDS))
        resolved = _resolve(ns.command, ns)
        return COMMANDS[ns.command](resolved)
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FeatureParseError, ContractError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
