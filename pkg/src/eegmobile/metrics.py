"""Confusion matrix, accuracy, per-class / macro F1 and Cohen's kappa."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ClassOutOfRange, EmptyMatrix, LengthMismatch

__all__ = ["EvalReport", "confusion", "report", "format_table", "CLASS_NAMES"]

CLASS_NAMES = ("W", "N1", "N2", "N3", "REM")


def confusion(y_true, y_pred, k: int = 5) -> np.ndarray:
    """k x k count matrix, rows = true class, columns = predicted class."""
    t = np.asarray(y_true, dtype=np.int64).reshape(-1)
    p = np.asarray(y_pred, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise LengthMismatch(f"{t.size} labels vs {p.size} predictions")
    for name, arr in (("y_true", t), ("y_pred", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ClassOutOfRange(f"{name} has values outside [0, {k})")
    return np.bincount(t * k + p, minlength=k * k).reshape(k, k)


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    kappa: float
    per_class_f1: np.ndarray
    confusion: np.ndarray
    precision: np.ndarray = field(repr=False, default=None)
    recall: np.ndarray = field(repr=False, default=None)
    absent: np.ndarray = field(repr=False, default=None)  # classes with F1 = 0/0

    def to_dict(self) -> dict:
        return {
            "accuracy": float(self.accuracy),
            "macro_f1": float(self.macro_f1),
            "kappa": float(self.kappa),
            "per_class_f1": [float(v) for v in self.per_class_f1],
            "confusion": self.confusion.tolist(),
            "absent_classes": [int(i) for i in np.flatnonzero(self.absent)] if self.absent is not None else [],
        }

    def to_line(self) -> str:
        """Single JSON line mirroring the ACC / MF1 / Kappa / per-class F1 columns."""
        return json.dumps(self.to_dict(), sort_keys=True)


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return out


def report(cm) -> EvalReport:
    """Derive the evaluation metrics from a confusion matrix.

    0/0 precision, recall or F1 is taken as 0; classes absent from both
    truth and prediction are flagged in ``absent``. Kappa is 0 when the
    chance agreement is 1.
    """
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    total = cm.sum()
    if total <= 0:
        raise EmptyMatrix("confusion matrix has no samples")
    cm_f = cm.astype(np.float64)
    tp = np.diag(cm_f)
    rows = cm_f.sum(axis=1)
    cols = cm_f.sum(axis=0)
    precision = _safe_div(tp, cols)
    recall = _safe_div(tp, rows)
    f1 = _safe_div(2 * tp, rows + cols)
    accuracy = tp.sum() / total
    p_e = float((rows * cols).sum() / (float(total) ** 2))
    kappa = 0.0 if p_e == 1 else (accuracy - p_e) / (1 - p_e)
    return EvalReport(
        accuracy=float(accuracy),
        macro_f1=float(f1.mean()),
        kappa=float(kappa),
        per_class_f1=f1,
        confusion=cm.copy(),
        precision=precision,
        recall=recall,
        absent=(rows + cols) == 0,
    )


def format_table(reports: Sequence[tuple[str, EvalReport]], class_names=CLASS_NAMES) -> str:
    """Aligned plain-text table: name, ACC, MF1, Kappa, per-class F1 (percent)."""
    head = ["", "ACC", "MF1", "Kappa"] + list(class_names)
    rows = [head]
    for name, r in reports:
        rows.append(
            [name, f"{100 * r.accuracy:.2f}", f"{100 * r.macro_f1:.2f}", f"{r.kappa:.3f}"]
            + [f"{100 * v:.2f}" for v in r.per_class_f1]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
    lines = []
    for j, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
        if j == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines)
