"""Classification scoring: confusion matrix, overall/average accuracy,
Cohen's kappa, and a text report mirroring the usual per-class table."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (C, C), rows = truth, cols = prediction
    class_count: int


def confusion(truth, pred, class_count: int) -> ConfusionMatrix:
    """Tally (truth, prediction) pairs into a C x C count matrix."""
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape or truth.ndim != 1:
        raise ValueError("truth and pred must be equal-length 1-D label arrays")
    c = int(class_count)
    if c < 1:
        raise ValueError("class_count must be positive")
    if truth.size and (truth.min() < 0 or truth.max() >= c):
        raise ValueError("truth labels out of range")
    if pred.size and (pred.min() < 0 or pred.max() >= c):
        raise ValueError("pred labels out of range")
    counts = np.zeros((c, c), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return ConfusionMatrix(counts=counts, class_count=c)


def _require_nonempty(cm: ConfusionMatrix) -> np.ndarray:
    counts = np.asarray(cm.counts, dtype=np.float64)
    if counts.sum() <= 0:
        raise ValueError("confusion matrix is empty")
    return counts


def oa(cm: ConfusionMatrix) -> float:
    """Overall accuracy: trace / total."""
    counts = _require_nonempty(cm)
    return float(np.trace(counts) / counts.sum())


def per_class_accuracy(cm: ConfusionMatrix) -> np.ndarray:
    """Recall per class; NaN where a class has no truth samples."""
    counts = _require_nonempty(cm)
    row_sums = counts.sum(axis=1)
    with np.errstate(invalid="ignore"):
        return np.where(row_sums > 0, np.diag(counts) / row_sums, np.nan)


def aa(cm: ConfusionMatrix) -> float:
    """Average accuracy: mean per-class recall over classes with samples."""
    recalls = per_class_accuracy(cm)
    present = ~np.isnan(recalls)
    if not present.any():
        raise ValueError("no class has truth samples")
    return float(recalls[present].mean())


def kappa(cm: ConfusionMatrix) -> float:
    """Cohen's kappa: (p_o - p_e) / (1 - p_e), with p_e from the marginals."""
    counts = _require_nonempty(cm)
    total = counts.sum()
    p_o = np.trace(counts) / total
    p_e = float(counts.sum(axis=1) @ counts.sum(axis=0)) / (total * total)
    if 1.0 - p_e < 1e-15:
        # Degenerate marginals (all mass in one class on both sides).
        return 1.0 if p_o >= 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def format_report(cm: ConfusionMatrix, class_names: Optional[Sequence[str]] = None) -> str:
    """One row per class plus OA/AA/kappa summary rows.

    Accuracies are percentages; kappa is reported times 100 for table
    parity while `kappa()` itself stays in [-1, 1].
    """
    if class_names is None:
        class_names = [f"class_{i + 1}" for i in range(cm.class_count)]
    if len(class_names) != cm.class_count:
        raise ValueError("class_names length must equal class_count")
    recalls = per_class_accuracy(cm)
    width = max(12, max(len(str(n)) for n in class_names) + 2)
    lines = [f"{'Class':<{width}}{'Accuracy(%)':>12}"]
    for name, r in zip(class_names, recalls):
        cell = "n/a" if np.isnan(r) else f"{100.0 * r:.2f}"
        lines.append(f"{name:<{width}}{cell:>12}")
    lines.append(f"{'OA':<{width}}{100.0 * oa(cm):>12.2f}")
    lines.append(f"{'AA':<{width}}{100.0 * aa(cm):>12.2f}")
    lines.append(f"{'kappa x100':<{width}}{100.0 * kappa(cm):>12.2f}")
    return "\n".join(lines) + "\n"
