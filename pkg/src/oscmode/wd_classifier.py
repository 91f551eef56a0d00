"""Supervised mode recognition by 1-D Wasserstein distance between latent cycles.

A latent cycle (L points in the plane) is flattened to its 2L coordinates and
treated as an empirical distribution on the line. A query is scored against
every labelled benchmark cycle and assigned the mode with the lowest mean
distance.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, IoError, ShapeError


def flatten_cycle(cycle: np.ndarray) -> np.ndarray:
    """Interleave coordinates (z1(t0), z2(t0), z1(t1), ...) and sort ascending."""
    cycle = np.asarray(cycle, dtype=np.float64)
    if cycle.ndim == 1:
        cycle = cycle[:, None]
    if cycle.shape[0] == 0:
        raise ShapeError("empty cycle")
    return np.sort(cycle.reshape(-1), kind="stable")


def wd_1d(p, q) -> float:
    """Wasserstein-1 distance between two empirical distributions on the line.

    Equal sizes reduce to the mean absolute difference of order statistics.
    Otherwise the quantile functions are integrated exactly: with sizes a and
    b, breakpoints i/a and j/b are merged on the integer grid of denominator a*b.
    """
    p = np.sort(np.asarray(p, dtype=np.float64).reshape(-1))
    q = np.sort(np.asarray(q, dtype=np.float64).reshape(-1))
    a, b = p.shape[0], q.shape[0]
    if a == 0 or b == 0:
        raise ShapeError("Wasserstein distance needs non-empty samples")
    if a == b:
        return float(np.mean(np.abs(p - q)))
    # quantile u in (k/(ab), (k+1)/(ab)) maps to p[k // b] and q[k // a];
    # integrate piecewise over merged breakpoints
    cuts = np.union1d(np.arange(0, a * b + 1, b), np.arange(0, a * b + 1, a))
    lo, hi = cuts[:-1], cuts[1:]
    diff = np.abs(p[lo // b] - q[lo // a])
    return float(np.sum(diff * (hi - lo)) / (a * b))


@dataclass
class BenchmarkLibrary:
    """Per-mode lists of sorted benchmark sample sequences."""

    modes: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        for mode, seqs in self.modes.items():
            if not seqs:
                raise DataError(f"mode {mode!r} has no benchmark cycles")

    @property
    def labels(self) -> list[str]:
        return sorted(self.modes)

    def size(self, mode: str) -> int:
        return len(self.modes[mode])


def build_benchmarks(cycles: Sequence[np.ndarray], labels: Sequence[Optional[str]]) -> BenchmarkLibrary:
    if len(cycles) != len(labels):
        raise ShapeError("one label per cycle required")
    if not cycles:
        raise DataError("no benchmark cycles")
    modes: dict[str, list[np.ndarray]] = {}
    for cycle, label in zip(cycles, labels):
        if label is None:
            raise DataError("benchmark cycles must be labelled")
        modes.setdefault(str(label), []).append(flatten_cycle(cycle))
    return BenchmarkLibrary(modes)


def score(library: BenchmarkLibrary, query: np.ndarray) -> dict[str, float]:
    samples = flatten_cycle(query)
    return {mode: float(np.mean([wd_1d(samples, ref) for ref in library.modes[mode]]))
            for mode in library.labels}


def classify(library: BenchmarkLibrary, query: np.ndarray) -> tuple[str, dict[str, float]]:
    """Predicted mode and the mean WD to each mode; ties go to the lexicographically first mode."""
    if not library.modes:
        raise DataError("empty benchmark library")
    scores = score(library, query)
    best = min(library.labels, key=lambda mode: (scores[mode], mode))
    return best, scores


@dataclass
class WdCycleResult:
    index: int
    scores: dict[str, float]
    predicted: str
    truth: Optional[str] = None


@dataclass
class WdReport:
    cycles: list[WdCycleResult] = field(default_factory=list)
    group_size: int = 1

    @property
    def accuracy(self) -> Optional[float]:
        scored = [c for c in self.cycles if c.truth is not None]
        if not scored:
            return None
        return sum(c.predicted == c.truth for c in scored) / len(scored)

    def to_dict(self) -> dict:
        rows = []
        for c in self.cycles:
            row = {"index": c.index, "scores": c.scores, "predicted": c.predicted}
            if c.truth is not None:
                row["truth"] = c.truth
            rows.append(row)
        return {"group_size": self.group_size, "cycles": rows}

    def write_json(self, path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc

    def write_csv(self, path) -> None:
        """One row per (circle, mode) pair, as plotted against circle index."""
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["circle", "mode", "wd"])
                for c in self.cycles:
                    for mode, value in c.scores.items():
                        w.writerow([c.index, mode, repr(value)])
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc


def classify_all(library: BenchmarkLibrary, queries: Sequence[np.ndarray],
                 truths: Optional[Sequence[Optional[str]]] = None, group_size: int = 1) -> WdReport:
    report = WdReport(group_size=group_size)
    for i, query in enumerate(queries):
        predicted, scores = classify(library, query)
        truth = truths[i] if truths is not None else None
        report.cycles.append(WdCycleResult(i, scores, predicted, truth))
    return report
