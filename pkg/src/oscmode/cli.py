"""Command-line front end.

Each subcommand runs one pipeline stage, writes its CSV/JSON/SVG outputs to
``--out`` and finishes with ``run_report.json`` (config echo, artifact list
with SHA-256 digests, headline metrics). ``pipeline`` chains every stage.

Exit codes: 0 success, 1 usage/config error, 2 I/O error, 3 data or shape
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import clustering, dataset, metrics, pca, plotting, synthgen, vae
from . import wd_classifier as wd
from .errors import ConfigError, DataError, IoError, NumericalError, OscModeError

log = logging.getLogger("oscmode")

COMMANDS = ("synth", "train", "encode", "classify-wd", "cluster", "pca-compare", "sensitivity", "pipeline")
SENSITIVITY_METRICS = ("accuracy", "AC", "PR", "RC", "F1", "FAR", "AUC", "GMS")


# ---------------------------------------------------------------- config

@dataclass
class ModelSection:
    latent_dim: int = 2
    variance_scaling: bool = False


@dataclass
class WdSection:
    group_size: int = 1

    def __post_init__(self):
        if self.group_size < 1:
            raise ConfigError("wd.group_size must be >= 1")


@dataclass
class ClusterSection:
    method: str = "gmm-dtw"
    k: Optional[int] = None
    pca_dims: Optional[int] = 8
    reg: float = 1e-6

    def __post_init__(self):
        if self.method not in clustering.METHODS:
            raise ConfigError(f"cluster.method must be one of {', '.join(clustering.METHODS)}")
        if self.k is not None and self.k < 1:
            raise ConfigError("cluster.k must be positive")
        if self.pca_dims is not None and self.pca_dims < 1:
            raise ConfigError("cluster.pca_dims must be positive or null")
        if not self.reg > 0:
            raise ConfigError("cluster.reg must be positive")


@dataclass
class PcaSection:
    k_max: int = 8

    def __post_init__(self):
        if self.k_max < 1:
            raise ConfigError("pca.k_max must be >= 1")


@dataclass
class SensitivitySection:
    batch_sizes: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    learning_rates: list[float] = field(default_factory=lambda: [1e-4, 5e-4, 1e-3, 5e-3])
    methods: list[str] = field(default_factory=lambda: ["gmm-dtw"])
    max_epochs: Optional[int] = None

    def __post_init__(self):
        if not self.batch_sizes or not self.learning_rates:
            raise ConfigError("sensitivity grid must be non-empty")
        for m in self.methods:
            if m not in clustering.METHODS:
                raise ConfigError(f"unknown sensitivity method {m!r}")


@dataclass
class PathsSection:
    manifest: Optional[str] = None
    model: Optional[str] = None
    dataset: Optional[str] = None


SYNTH_FIELDS = {f.name: f.type for f in dataclasses.fields(synthgen.SynthConfig) if f.name != "seed"}
TRAIN_FIELDS = {f.name: f.type for f in dataclasses.fields(vae.TrainConfig) if f.name != "seed"}
SECTIONS = {
    "model": ModelSection,
    "wd": WdSection,
    "cluster": ClusterSection,
    "pca": PcaSection,
    "sensitivity": SensitivitySection,
    "paths": PathsSection,
}


@dataclass
class RunConfig:
    seed: int = 0
    synth: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    model: ModelSection = field(default_factory=ModelSection)
    wd: WdSection = field(default_factory=WdSection)
    cluster: ClusterSection = field(default_factory=ClusterSection)
    pca: PcaSection = field(default_factory=PcaSection)
    sensitivity: SensitivitySection = field(default_factory=SensitivitySection)
    paths: PathsSection = field(default_factory=PathsSection)

    def synth_config(self) -> synthgen.SynthConfig:
        return synthgen.SynthConfig(**self.synth, seed=self.seed)

    def train_config(self, **override) -> vae.TrainConfig:
        try:
            return vae.TrainConfig(**{**self.train, **override}, seed=self.seed)
        except DataError as exc:
            raise ConfigError(f"train: {exc}") from exc

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "synth": dict(self.synth), "train": dict(self.train)}
        for name in SECTIONS:
            out[name] = dataclasses.asdict(getattr(self, name))
        return out


def _coerce(value, type_name: str, key: str):
    """Convert YAML scalars to the declared field type (YAML reads 1e-3 as text)."""
    t = str(type_name).replace(" ", "")
    optional = t.startswith("Optional[")
    if optional:
        t = t[len("Optional["):-1]
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{key} may not be null")
    try:
        if t == "bool":
            if not isinstance(value, bool):
                raise ValueError("expected true/false")
            return value
        if t == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError("expected an integer")
            return int(value)
        if t == "float":
            if isinstance(value, bool):
                raise ValueError("expected a number")
            return float(value)
        if t == "str":
            return str(value)
        if t.startswith("list["):
            if not isinstance(value, (list, tuple)):
                raise ValueError("expected a list")
            inner = t[5:-1]
            return [_coerce(v, inner, key) for v in value]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc} (got {value!r})") from exc
    return value


def _strict(raw, allowed: dict, section: str) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        hint = " (set seed at top level)" if "seed" in unknown else ""
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}{hint}")
    return {k: _coerce(v, allowed[k], f"{section}.{k}") for k, v in raw.items()}


def build_config(raw: Optional[dict]) -> RunConfig:
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    top = {"seed", "synth", "train", *SECTIONS}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    seed = _coerce(raw.get("seed", 0), "int", "seed")
    synth = _strict(raw.get("synth"), SYNTH_FIELDS, "synth")
    train = _strict(raw.get("train"), TRAIN_FIELDS, "train")
    sections = {}
    for name, cls in SECTIONS.items():
        allowed = {f.name: f.type for f in dataclasses.fields(cls)}
        sections[name] = cls(**_strict(raw.get(name), allowed, name))
    cfg = RunConfig(seed, synth, train, **sections)
    cfg.synth_config()  # validate eagerly
    cfg.train_config()
    return cfg


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return build_config({})
    import yaml

    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc
    return build_config(raw)


# ---------------------------------------------------------------- helpers

@dataclass
class Entry:
    label: Optional[str]
    train: dataset.FeatureMatrix
    predict: Optional[dataset.FeatureMatrix]


def load_entries(manifest_path) -> list[Entry]:
    out = []
    for key, rec in synthgen.read_manifest(manifest_path).items():
        label = None if key == synthgen.UNLABELED_KEY else key
        train = dataset.load_csv(rec["train"])
        predict = dataset.load_csv(rec["predict"]) if rec.get("predict") else None
        out.append(Entry(label, train, predict))
    if not out:
        raise DataError("manifest lists no datasets")
    return out


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"{flag} is required for this command")
    return value


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {path}: {exc}") from exc
    return path


def _write_csv(path: Path, header, rows) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else v


def _write_json(path: Path, obj) -> None:
    try:
        path.write_text(json.dumps(_plain(obj), indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _plain(obj):
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


REPORT_NAME = "run_report.json"
TIMINGS_NAME = "timings.json"


def write_run_report(out: Path, command: str, cfg: RunConfig, summary: dict) -> Path:
    artifacts = []
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name not in (REPORT_NAME, TIMINGS_NAME):
            rel = p.relative_to(out).as_posix()
            artifacts.append({"path": rel, "bytes": p.stat().st_size, "sha256": _sha256(p)})
    report = {"command": command, "config": cfg.to_dict(), "artifacts": artifacts, "summary": summary}
    path = out / REPORT_NAME
    _write_json(path, report)
    return path


class Timer:
    def __init__(self):
        self.stages: dict[str, float] = {}

    def run(self, name, fn, *args, **kw):
        start = time.perf_counter()
        result = fn(*args, **kw)
        self.stages[name] = time.perf_counter() - start
        log.info("%s finished in %.2f s", name, self.stages[name])
        return result


def _latent_cycles(model, data: dataset.FeatureMatrix, L: int, group_size: int = 1) -> list[np.ndarray]:
    z = vae.project(model, data).points
    windows = dataset.segment_cycles(len(z), L).windows(z)
    if group_size > 1:
        windows = dataset.group_cycles(windows, group_size)
    return list(windows)


# ---------------------------------------------------------------- stages

def stage_synth(cfg: RunConfig, out: Path) -> dict:
    suite = synthgen.generate_suite(cfg.synth_config())
    manifest = synthgen.write_suite(suite, out)
    return {"manifest": manifest.relative_to(out).as_posix(), "modes": [e.label for e in suite.entries],
            "files": 2 * len(suite.entries) - sum(e.predict is None for e in suite.entries)}


def _train_model(cfg: RunConfig, entries: list[Entry], **override):
    data = dataset.concatenate([e.train for e in entries])
    model = vae.build_model(data.n_channels, cfg.model.latent_dim, cfg.seed, cfg.model.variance_scaling)
    return vae.train(model, data, cfg.train_config(**override))


def stage_train(cfg: RunConfig, out: Path, entries: list[Entry]) -> dict:
    model, history = _train_model(cfg, entries)
    vae.save_model(out / "model.json", model)
    _write_csv(out / "loss_history.csv", ["epoch", "train_loss", "val_loss", "val_rec", "val_kl", "val_mse"],
               [(r.epoch, r.train_loss, r.val_loss, r.rec, r.kl, r.val_mse) for r in history])
    plotting.loss_history(out / "loss_history.svg", [r.epoch for r in history],
                          [r.train_loss for r in history], [r.val_loss for r in history])
    best = min(history, key=lambda r: (r.val_loss, r.epoch))
    return {"epochs": len(history), "best_epoch": best.epoch, "best_val_loss": best.val_loss,
            "model": "model.json", "val_mse": best.val_mse}


def stage_encode(cfg: RunConfig, out: Path, model, data: dataset.FeatureMatrix) -> dict:
    traj = vae.project(model, data)
    header = ["t"] + [f"z{i + 1}" for i in range(traj.points.shape[1])]
    _write_csv(out / "latent.csv", header, ([t, *row] for t, row in zip(data.times, traj.points)))
    return {"rows": len(traj), "latent": "latent.csv"}


def _labelled(entries: list[Entry]) -> list[Entry]:
    return [e for e in entries if e.label is not None]


def _query_sets(entries: list[Entry], dataset_path: Optional[str]):
    """(label-or-None, matrix) pairs to score: a given dataset, else every predict split."""
    if dataset_path is not None:
        return [(None, dataset.load_csv(dataset_path))]
    pairs = [(e.label, e.predict if e.predict is not None else e.train) for e in entries]
    return pairs


def stage_classify_wd(cfg: RunConfig, out: Path, model, entries: list[Entry],
                      dataset_path: Optional[str] = None) -> dict:
    g = cfg.wd.group_size
    bench = _labelled(entries)
    if not bench or len(bench) != len(entries):
        raise DataError("benchmark datasets must all be labelled")
    L = dataset.common_period([e.train for e in bench])
    cycles, labels = [], []
    for e in bench:
        c = _latent_cycles(model, e.train, L, g)
        cycles += c
        labels += [e.label] * len(c)
    library = wd.build_benchmarks(cycles, labels)
    queries, truths = [], []
    for label, data in _query_sets(entries, dataset_path):
        c = _latent_cycles(model, data, L, g)
        queries += c
        truths += [label] * len(c)
    report = wd.classify_all(library, queries, truths if all(t is not None for t in truths) else None, g)
    report.write_json(out / "wd_report.json")
    report.write_csv(out / "wd_scores.csv")
    plotting.wd_scores(out / "wd_scores.svg", list(range(len(queries))),
                       {m: [c.scores[m] for c in report.cycles] for m in library.labels})
    summary = {"cycle_length": L, "group_size": g, "queries": len(queries),
               "benchmarks": {m: library.size(m) for m in library.labels}}
    if report.accuracy is not None:
        names = [e.label for e in bench]
        truth = np.array([names.index(c.truth) for c in report.cycles])
        pred = np.array([names.index(c.predicted) for c in report.cycles])
        scores = -np.array([[c.scores[n] for n in names] for c in report.cycles])
        rep = metrics.evaluate(pred, truth, len(names), names, scores)
        _write_json(out / "wd_metrics.json", rep.to_dict())
        plotting.confusion(out / "wd_confusion.svg", rep.confusion.counts, names)
        summary["accuracy"] = rep.accuracy
        summary["metrics"] = rep.to_dict()
    return summary


def stage_cluster(cfg: RunConfig, out: Path, model, entries: list[Entry], method: str,
                  dataset_path: Optional[str] = None) -> dict:
    sets = _query_sets(entries, dataset_path)
    L = dataset.common_period([d for _, d in sets] if dataset_path else [e.train for e in entries])
    cycles, truths = [], []
    for label, data in sets:
        c = _latent_cycles(model, data, L)
        cycles += c
        truths += [label] * len(c)
    has_truth = all(t is not None for t in truths)
    names = []
    for t in truths:
        if t is not None and t not in names:
            names.append(t)
    K = cfg.cluster.k if cfg.cluster.k is not None else (len(names) if has_truth else None)
    if K is None:
        raise ConfigError("--k is required when the data carry no mode labels")
    if K > len(cycles):
        raise DataError(f"K={K} exceeds the {len(cycles)} available cycles")
    prefix = f"cluster-{method}"
    kw = {"reg": cfg.cluster.reg}
    if method == "gmm-dtw":
        dist = clustering.dtw_feature_matrix(cycles)
        dist.write_csv(out / f"{prefix}_dtw_matrix.csv")
        kw.update(dist=dist, pca_dims=cfg.cluster.pca_dims)
    elif method == "kshape":
        kw = {}
    labels, scores = clustering.cluster(method, cycles, K, cfg.seed, **kw)
    report = clustering.ClusteringReport(method, K, cfg.seed, [int(v) for v in labels],
                                         extra={"cycle_length": L})
    shown = labels
    summary = {"method": method, "K": K, "cycles": len(cycles)}
    truth = None
    if has_truth and len(names) <= K <= clustering.MAX_ALIGN_K:
        truth = np.array([names.index(t) for t in truths])
        if K > len(names):
            names = names + [f"extra{k}" for k in range(len(names), K)]
        perm, aligned = clustering.align_labels(labels, truth, K)
        rep = metrics.evaluate(aligned, truth, K, names, clustering.permute_scores(scores, perm))
        report.permutation = list(perm)
        report.metrics = rep.to_dict()
        shown = aligned
        summary.update(accuracy=rep.accuracy, macro_FAR=rep.macro["FAR"], permutation=list(perm))
        plotting.confusion(out / f"{prefix}_confusion.svg", rep.confusion.counts, names)
    _write_json(out / f"{prefix}_report.json", report.to_dict())
    _write_csv(out / f"{prefix}_labels.csv", ["cycle", "label", "aligned", "truth"],
               [(i, int(labels[i]), int(shown[i]) if truth is not None else None,
                 truths[i]) for i in range(len(cycles))])
    _write_csv(out / f"{prefix}_trajectory.csv", ["cycle", "step", "z1", "z2", "label"],
               [(i, s, c[s, 0], c[s, 1], int(shown[i])) for i, c in enumerate(cycles) for s in range(len(c))])
    keys = [names[int(v)] if truth is not None else f"cluster {int(v)}" for v in shown]
    plotting.latent_cycles(out / f"{prefix}_trajectory.svg", cycles, keys, title=method)
    return summary


def stage_pca_compare(cfg: RunConfig, out: Path, entries: Optional[list[Entry]], model=None,
                      dataset_path: Optional[str] = None) -> dict:
    if dataset_path is not None:
        fit_data = held = dataset.load_csv(dataset_path)
    else:
        fit_data = dataset.concatenate([e.train for e in entries])
        splits = [e.predict for e in entries if e.predict is not None]
        held = dataset.concatenate(splits) if splits else fit_data
    norm = model.normalizer if model is not None and model.normalizer is not None else dataset.fit_normalizer(fit_data)
    x_fit = dataset.normalize_values(norm, fit_data.values)
    x_held = dataset.normalize_values(norm, held.values)
    k_max = min(cfg.pca.k_max, x_fit.shape[0] - 1, x_fit.shape[1])
    curve = pca.mse_curve(x_fit, k_max, x_held)
    rows = [("PCA", k, mse) for k, mse in curve]
    summary = {"k_max": k_max, "pca": {str(k): mse for k, mse in curve}}
    vae_mse = None
    if model is not None:
        vae_mse = vae.reconstruction_mse(model, held)
        rows.append(("VAE", model.latent_dim, vae_mse))
        crossing = [k for k, mse in curve if mse <= vae_mse]
        summary.update(vae=vae_mse, crossover_k=crossing[0] if crossing else None)
    _write_csv(out / "mse_curve.csv", ["method", "k", "mse"], rows)
    plotting.mse_curve(out / "mse_curve.svg", [k for k, _ in curve], [m for _, m in curve], vae_mse)
    return summary


def _cell_metrics(model, entries: list[Entry], method: str, cfg: RunConfig) -> dict:
    labelled = _labelled(entries)
    L = dataset.common_period([e.train for e in labelled])
    cycles, truth = [], []
    names = [e.label for e in labelled]
    for k, e in enumerate(labelled):
        c = _latent_cycles(model, e.predict if e.predict is not None else e.train, L)
        cycles += c
        truth += [k] * len(c)
    truth = np.array(truth)
    K = len(names)
    kw = {"reg": cfg.cluster.reg}
    if method == "gmm-dtw":
        kw["pca_dims"] = cfg.cluster.pca_dims
    elif method == "kshape":
        kw = {}
    labels, scores = clustering.cluster(method, cycles, K, cfg.seed, **kw)
    perm, aligned = clustering.align_labels(labels, truth, K)
    rep = metrics.evaluate(aligned, truth, K, names, clustering.permute_scores(scores, perm))
    auc_value = rep.AUC if isinstance(rep.AUC, float) else (rep.AUC or {}).get("macro")
    return {"accuracy": rep.accuracy, "AC": rep.macro["AC"], "PR": rep.macro["PR"], "RC": rep.macro["RC"],
            "F1": rep.macro["F1"], "FAR": rep.macro["FAR"], "AUC": auc_value, "GMS": rep.GMS}


def stage_sensitivity(cfg: RunConfig, out: Path, entries: list[Entry]) -> dict:
    if len(_labelled(entries)) < 2:
        raise DataError("sensitivity analysis needs at least two labelled modes")
    sc = cfg.sensitivity
    override = {} if sc.max_epochs is None else {"max_epochs": sc.max_epochs}
    rows = []
    for bs in sc.batch_sizes:
        for lr in sc.learning_rates:
            row = {"cell": len(rows), "batch_size": bs, "learning_rate": lr, "status": "ok",
                   "epochs": None, "best_val_loss": None}
            try:
                model, history = _train_model(cfg, entries, batch_size=bs, learning_rate=lr, **override)
                row["epochs"] = len(history)
                row["best_val_loss"] = min(r.val_loss for r in history)
                for method in sc.methods:
                    for name, value in _cell_metrics(model, entries, method, cfg).items():
                        row[f"{method}:{name}"] = value
            except (OscModeError, FloatingPointError, np.linalg.LinAlgError) as exc:
                row["status"] = f"failed: {type(exc).__name__}: {exc}"
                log.warning("cell bs=%s lr=%s failed: %s", bs, lr, exc)
            rows.append(row)
    columns = ["cell", "batch_size", "learning_rate", "status", "epochs", "best_val_loss"]
    columns += [f"{m}:{name}" for m in sc.methods for name in SENSITIVITY_METRICS]
    _write_csv(out / "sensitivity.csv", columns, [[r.get(c) for c in columns] for r in rows])
    spread = []
    for m in sc.methods:
        for name in SENSITIVITY_METRICS:
            vals = [r[f"{m}:{name}"] for r in rows if r["status"] == "ok" and r.get(f"{m}:{name}") is not None]
            if vals:
                spread.append((m, name, min(vals), max(vals), max(vals) - min(vals), len(vals)))
            else:
                spread.append((m, name, None, None, None, 0))
    _write_csv(out / "sensitivity_spread.csv", ["method", "metric", "min", "max", "spread", "cells"], spread)
    for m in sc.methods:
        plotting.sensitivity(out / f"sensitivity_{m}.svg",
                             [{**r, "value": r.get(f"{m}:accuracy")} for r in rows], "value",
                             title=f"{m} accuracy")
    summary = {"cells": len(rows), "failed": sum(r["status"] != "ok" for r in rows),
               "spread": {f"{m}:{name}": s for m, name, _, _, s, _ in spread}}
    _write_json(out / "sensitivity.json", {"rows": rows, "summary": summary})
    return summary


# ---------------------------------------------------------------- commands

def _model(cfg: RunConfig):
    return vae.load_model(_require(cfg.paths.model, "--model"))


def run_command(command: str, cfg: RunConfig, out: Path, record_timings: bool = False) -> dict:
    out = _ensure_dir(out)
    timer = Timer()
    paths = cfg.paths
    if command == "synth":
        summary = timer.run("synth", stage_synth, cfg, out)
    elif command == "train":
        entries = load_entries(_require(paths.manifest, "--manifest"))
        summary = timer.run("train", stage_train, cfg, out, entries)
    elif command == "encode":
        data = dataset.load_csv(_require(paths.dataset, "--dataset"))
        summary = timer.run("encode", stage_encode, cfg, out, _model(cfg), data)
    elif command == "classify-wd":
        entries = load_entries(_require(paths.manifest, "--manifest"))
        summary = timer.run("classify-wd", stage_classify_wd, cfg, out, _model(cfg), entries, paths.dataset)
    elif command == "cluster":
        entries = load_entries(paths.manifest) if paths.manifest else []
        if not entries and paths.dataset is None:
            raise ConfigError("cluster needs --manifest or --dataset")
        summary = timer.run("cluster", stage_cluster, cfg, out, _model(cfg), entries, cfg.cluster.method,
                            paths.dataset)
    elif command == "pca-compare":
        entries = load_entries(paths.manifest) if paths.manifest else None
        if entries is None and paths.dataset is None:
            raise ConfigError("pca-compare needs --manifest or --dataset")
        model = _model(cfg) if paths.model else None
        summary = timer.run("pca-compare", stage_pca_compare, cfg, out, entries, model, paths.dataset)
    elif command == "sensitivity":
        if paths.manifest:
            entries = load_entries(paths.manifest)
        else:
            suite = synthgen.generate_suite(cfg.synth_config())
            entries = [Entry(e.label, e.train, e.predict) for e in suite.entries]
        summary = timer.run("sensitivity", stage_sensitivity, cfg, out, entries)
    elif command == "pipeline":
        summary = run_pipeline(cfg, out, timer)
    else:
        raise ConfigError(f"unknown command {command!r}")
    write_run_report(out, command, cfg, summary)
    if record_timings:
        _write_json(out / TIMINGS_NAME, timer.stages)
    return summary


def run_pipeline(cfg: RunConfig, out: Path, timer: Timer) -> dict:
    data_dir = _ensure_dir(out / "data")
    summary = {"synth": timer.run("synth", stage_synth, cfg, data_dir)}
    entries = load_entries(data_dir / "manifest.json")
    summary["train"] = timer.run("train", stage_train, cfg, out, entries)
    model = vae.load_model(out / "model.json")
    labelled = _labelled(entries)
    if len(labelled) >= 2:
        summary["classify-wd"] = timer.run("classify-wd", stage_classify_wd, cfg, out, model, entries)
        for method in clustering.METHODS:
            summary[f"cluster-{method}"] = timer.run(f"cluster-{method}", stage_cluster, cfg, out, model,
                                                     entries, method)
    summary["pca-compare"] = timer.run("pca-compare", stage_pca_compare, cfg, out, entries, model)
    return summary


# ---------------------------------------------------------------- argparse

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="oscmode", description="Mode recognition for coupled oscillating flames.")
    p.add_argument("-v", "--verbose", action="store_true", help="log stage progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML or JSON run configuration")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int)
        s.add_argument("--timings", action="store_true", help=f"also write {TIMINGS_NAME}")
        if name in ("train", "classify-wd", "cluster", "pca-compare", "sensitivity"):
            s.add_argument("--manifest", help="dataset manifest written by 'synth'")
        if name in ("encode", "classify-wd", "cluster", "pca-compare"):
            s.add_argument("--model", help="trained model JSON")
            s.add_argument("--dataset", help="single dataset CSV")
        if name == "classify-wd":
            s.add_argument("--group-size", type=int)
        if name == "cluster":
            s.add_argument("--method", choices=clustering.METHODS)
            s.add_argument("--k", type=int)
        if name == "pca-compare":
            s.add_argument("--k-max", type=int)
    return p


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    raw = cfg.to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
    for key in ("manifest", "model", "dataset"):
        if getattr(args, key, None) is not None:
            raw["paths"][key] = getattr(args, key)
    if getattr(args, "group_size", None) is not None:
        raw["wd"]["group_size"] = args.group_size
    if getattr(args, "method", None) is not None:
        raw["cluster"]["method"] = args.method
    if getattr(args, "k", None) is not None:
        raw["cluster"]["k"] = args.k
    if getattr(args, "k_max", None) is not None:
        raw["pca"]["k_max"] = args.k_max
    return build_config(raw)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = apply_overrides(load_config(args.config), args)
        summary = run_command(args.command, cfg, Path(args.out), args.timings)
    except OscModeError as exc:
        print(f"oscmode {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"oscmode {args.command}: I/O error: {exc}", file=sys.stderr)
        return IoError.exit_code
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"oscmode {args.command}: numerical failure: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    print(json.dumps(_plain({"command": args.command, "out": str(args.out), **_headline(summary)})))
    return 0


def _headline(summary: dict) -> dict:
    """Scalar entries only, for the one-line stdout summary."""
    out = {}
    for k, v in summary.items():
        if isinstance(v, dict):
            for k2, v2 in v.items():
                if isinstance(v2, (int, float, str)) or v2 is None:
                    out[f"{k}.{k2}"] = v2
        elif isinstance(v, (int, float, str)) or v is None:
            out[k] = v
    return out


if __name__ == "__main__":
    sys.exit(main())
