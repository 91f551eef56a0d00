"""Confusion matrices and classification indicators.

Per-class AC, PR, RC, F1 and FAR come from one-vs-rest counts, the macro row
averages them over classes, and GMS is the product of every class's PR, RC
and F1 under an N-th root. AUC is rank based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, ShapeError

RATE_NAMES = ("AC", "PR", "RC", "F1", "FAR")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K); rows truth, columns prediction
    names: tuple[str, ...]

    @property
    def K(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {"names": list(self.names), "counts": self.counts.tolist()}


@dataclass(frozen=True)
class BinaryCounts:
    TP: int
    FP: int
    TN: int
    FN: int

    @property
    def total(self) -> int:
        return self.TP + self.FP + self.TN + self.FN


@dataclass
class Rates:
    AC: float
    PR: float
    RC: float
    F1: float
    FAR: float
    undefined: tuple[str, ...] = ()

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.AC, self.PR, self.RC, self.F1, self.FAR)

    def to_dict(self) -> dict:
        out = {name: value for name, value in zip(RATE_NAMES, self.as_tuple())}
        if self.undefined:
            out["undefined"] = list(self.undefined)
        return out


def confusion(pred, truth, K: int, names: Optional[Sequence[str]] = None) -> ConfusionMatrix:
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError("pred and truth differ in length")
    for arr in (pred, truth):
        if arr.size and (arr.min() < 0 or arr.max() >= K):
            raise DataError(f"labels must lie in [0, {K})")
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    names = tuple(names) if names is not None else tuple(str(k) for k in range(K))
    if len(names) != K:
        raise ShapeError("one name per class required")
    return ConfusionMatrix(counts, names)


def one_vs_rest(cm: ConfusionMatrix, k: int) -> BinaryCounts:
    c = cm.counts
    tp = int(c[k, k])
    fn = int(c[k, :].sum()) - tp
    fp = int(c[:, k].sum()) - tp
    tn = cm.total - tp - fn - fp
    return BinaryCounts(tp, fp, tn, fn)


def _ratio(num: float, den: float, name: str, flags: list) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def rates(c: BinaryCounts) -> Rates:
    flags: list[str] = []
    ac = _ratio(c.TN + c.TP, c.total, "AC", flags)
    pr = _ratio(c.TP, c.TP + c.FP, "PR", flags)
    rc = _ratio(c.TP, c.TP + c.FN, "RC", flags)
    f1 = _ratio(2 * pr * rc, pr + rc, "F1", flags)
    far = _ratio(c.FP, c.FP + c.TN, "FAR", flags)
    return Rates(ac, pr, rc, f1, far, tuple(flags))


def auc(scores, positives) -> float:
    """P(score of a random positive > score of a random negative), ties counted half."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    pos = np.asarray(positives, dtype=bool).reshape(-1)
    if s.shape != pos.shape:
        raise ShapeError("one flag per score required")
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative")
    # midranks handle ties exactly
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    ranks = np.empty(s.size)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    wins = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(wins / (n_pos * n_neg))


def gms(pr: Sequence[float], rc: Sequence[float], f1: Sequence[float], root: str = "classes") -> float:
    """Geometric mean score; ``root='classes'`` takes the N-th root, ``'factors'`` the 3N-th."""
    n = len(pr)
    if n == 0 or len(rc) != n or len(f1) != n:
        raise ShapeError("need equal, non-empty per-class lists")
    prod = 1.0
    for values in zip(pr, rc, f1):
        for v in values:
            prod *= float(v)
    if root == "classes":
        power = 1.0 / n
    elif root == "factors":
        power = 1.0 / (3 * n)
    else:
        raise DataError(f"unknown GMS root {root!r}")
    return prod ** power if prod > 0 else 0.0


def macro(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ShapeError("macro average of no classes")
    return float(math.fsum(values) / len(values))


@dataclass
class MetricsReport:
    per_class: dict[str, Rates]
    macro: dict[str, float]
    GMS: float
    AUC: Optional[object] = None  # float (binary) or {"per_class": [...], "macro": m}
    confusion: Optional[ConfusionMatrix] = None
    gms_root: str = "classes"

    @property
    def accuracy(self) -> float:
        cm = self.confusion
        return float(np.trace(cm.counts) / cm.total) if cm is not None and cm.total else float("nan")

    def to_dict(self) -> dict:
        out = {
            "per_class": {name: r.to_dict() for name, r in self.per_class.items()},
            "macro": dict(self.macro),
            "GMS": self.GMS,
            "GMS_note": f"computed once over all classes ({self.gms_root} root), not macro-averaged",
        }
        if self.AUC is not None:
            out["AUC"] = self.AUC
        if self.confusion is not None:
            out["confusion"] = self.confusion.to_dict()
            out["accuracy"] = self.accuracy
        return out


def evaluate(pred, truth, K: int, names: Optional[Sequence[str]] = None,
             scores: Optional[np.ndarray] = None, gms_root: str = "classes") -> MetricsReport:
    """Full indicator set. ``scores`` (n, K), higher meaning more likely, enables AUC."""
    cm = confusion(pred, truth, K, names)
    per = {}
    for k, name in enumerate(cm.names):
        per[name] = rates(one_vs_rest(cm, k))
    mac = {rn: macro([getattr(r, rn) for r in per.values()]) for rn in RATE_NAMES}
    g = gms([r.PR for r in per.values()], [r.RC for r in per.values()], [r.F1 for r in per.values()], gms_root)
    auc_value = None
    if scores is not None:
        scores = np.asarray(scores, dtype=np.float64)
        truth_arr = np.asarray(truth, dtype=np.int64).reshape(-1)
        if scores.shape != (truth_arr.size, K):
            raise ShapeError("scores must be (n, K)")
        if K == 2:
            auc_value = auc(scores[:, 1], truth_arr == 1)
        else:
            per_auc = []
            for k in range(K):
                pos = truth_arr == k
                per_auc.append(auc(scores[:, k], pos) if 0 < pos.sum() < pos.size else None)
            valid = [a for a in per_auc if a is not None]
            auc_value = {"per_class": per_auc, "macro": macro(valid) if valid else None}
    return MetricsReport(per, mac, g, auc_value, cm, gms_root)
