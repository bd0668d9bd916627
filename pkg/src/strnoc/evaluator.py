"""NoC prediction, confusion matrices, per-class metrics, abstention sweeps, MAC baseline."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .simulator import SimulatedProfile

N_CLASSES = 10
DEFAULT_THRESHOLDS = tuple(sorted(set(
    [round(0.1 + 0.05 * i, 2) for i in range(18)] + [0.95, 0.97, 0.99, 0.995, 0.999]
)))


@dataclass
class ConfusionMatrix:
    """``counts[pred - 1, true - 1]``: rows are predicted NoC, columns known NoC."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(self.counts < 0):
            raise ValueError("confusion counts must be nonnegative")

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def column_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def overall_accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else float("nan")

    def format_table(self) -> str:
        """Plain-text layout: predicted NoC down the side, known NoC across the top."""
        k = self.n_classes
        width = max(5, len(str(self.total)) + 1)
        head = "Pred\\Known" + "".join(f"{j + 1:>{width}}" for j in range(k)) + f"{'Total':>{width + 1}}"
        lines = [head]
        for i in range(k):
            row = "".join(f"{c:>{width}}" for c in self.counts[i])
            lines.append(f"{i + 1:>10}" + row + f"{self.row_totals[i]:>{width + 1}}")
        lines.append(f"{'Total':>10}" + "".join(f"{c:>{width}}" for c in self.column_totals)
                     + f"{self.total:>{width + 1}}")
        return "\n".join(lines)


@dataclass
class ClassMetrics:
    accuracy: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray

    def as_dict(self) -> dict:
        return {
            str(k + 1): {
                "accuracy": float(self.accuracy[k]),
                "precision": float(self.precision[k]),
                "recall": float(self.recall[k]),
                "f1": float(self.f1[k]),
            }
            for k in range(len(self.accuracy))
        }


@dataclass
class ThresholdCurve:
    thresholds: np.ndarray
    accuracy: np.ndarray          # NaN where nothing is classified
    proportion_classified: np.ndarray
    undefined: np.ndarray         # True where accuracy is undefined

    def as_list(self) -> list[dict]:
        return [
            {
                "threshold": float(t),
                "accuracy": None if u else float(a),
                "proportion_classified": float(p),
                "accuracy_undefined": bool(u),
            }
            for t, a, p, u in zip(self.thresholds, self.accuracy, self.proportion_classified, self.undefined)
        ]


def predict_noc(model, tensor) -> tuple[int, np.ndarray]:
    """Most probable NoC (ties toward the lower NoC) and the full distribution."""
    probs = np.asarray(model.predict_dense(tensor)[5], dtype=np.float64)
    return int(np.argmax(probs)) + 1, probs


def noc_from_probs(probs: Sequence[float]) -> int:
    return int(np.argmax(np.asarray(probs))) + 1


def confusion(predictions: Sequence[int], truths: Sequence[int], n_classes: int = N_CLASSES) -> ConfusionMatrix:
    predictions = np.asarray(predictions, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if predictions.shape != truths.shape:
        raise ValueError(f"length mismatch: {predictions.size} predictions vs {truths.size} truths")
    for arr, what in ((predictions, "prediction"), (truths, "truth")):
        if arr.size and (arr.min() < 1 or arr.max() > n_classes):
            raise ValueError(f"{what} outside 1..{n_classes}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (predictions - 1, truths - 1), 1)
    return ConfusionMatrix(counts)


def metrics(matrix: ConfusionMatrix) -> ClassMetrics:
    """Per-class one-vs-rest metrics (rows = predicted)."""
    c = matrix.counts.astype(np.float64)
    total = c.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(c)
    pred_tot = c.sum(axis=1)
    true_tot = c.sum(axis=0)
    fp = pred_tot - tp
    fn = true_tot - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_tot > 0, tp / pred_tot, 0.0)
        recall = np.where(true_tot > 0, tp / true_tot, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1), 0.0)
    acc = 1 - (fp + fn) / total
    return ClassMetrics(acc, precision, recall, f1)


def threshold_sweep(probs, truths, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> ThresholdCurve:
    """Classify only rows whose top probability is at least the threshold."""
    probs = np.asarray(probs, dtype=np.float64)
    truths = np.asarray(truths)
    thresholds = np.asarray(sorted(thresholds), dtype=np.float64)
    top = probs.max(axis=1) if len(probs) else np.zeros(0)
    pred = np.argmax(probs, axis=1) + 1 if len(probs) else np.zeros(0, dtype=int)
    correct = pred == truths
    n = len(probs)
    acc, prop, undef = [], [], []
    for t in thresholds:
        sel = top >= t
        k = int(sel.sum())
        prop.append(k / n if n else 0.0)
        if k == 0:
            acc.append(math.nan)
            undef.append(True)
        else:
            acc.append(float(correct[sel].mean()))
            undef.append(False)
    return ThresholdCurve(thresholds, np.array(acc), np.array(prop), np.array(undef))


def locus_allele_counts(profile: SimulatedProfile, plp_cutoff: float = 0.5, n_loci: int = 24) -> np.ndarray:
    counts = np.zeros(n_loci, dtype=np.int64)
    for p in profile.peaks:
        if p.plp >= plp_cutoff:
            counts[p.locus] += 1
    return counts


def mac_estimate(profile: SimulatedProfile, plp_cutoff: float = 0.5) -> int:
    """Maximum allele count: ceil(busiest locus / 2), at least 1."""
    counts = locus_allele_counts(profile, plp_cutoff)
    return max(1, int(math.ceil(counts.max() / 2))) if counts.size else 1


def evaluation_report(predictions: Sequence[int], truths: Sequence[int], probs=None,
                      thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> dict:
    cm = confusion(predictions, truths)
    report = {
        "confusion": cm.counts.tolist(),
        "overall_accuracy": cm.overall_accuracy,
        "per_class": metrics(cm).as_dict(),
        "n": cm.total,
    }
    if probs is not None:
        report["threshold_curve"] = threshold_sweep(probs, truths, thresholds).as_list()
    return report


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")

