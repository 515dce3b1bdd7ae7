"""Classification metrics with macro averaging, and the report written by eval."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch


@dataclass
class TaskMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray  # rows: true class, columns: predicted class

    def as_row(self) -> list[float]:
        return [self.accuracy, self.precision, self.recall, self.f1]


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(f"{y_true.shape[0]} labels vs {y_pred.shape[0]} predictions")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def classification_metrics(y_true, y_pred, n_classes: int) -> TaskMetrics:
    """Accuracy plus macro precision/recall/F1; a class with an empty denominator scores 0.

    F1 is computed per class from that class's precision and recall and then
    macro-averaged.
    """
    cm = confusion_matrix(y_true, y_pred, n_classes)
    total = cm.sum()
    tp = np.diag(cm).astype(np.float64)
    pred_pos = cm.sum(axis=0).astype(np.float64)
    true_pos = cm.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_pos > 0, tp / pred_pos, 0.0)
        recall = np.where(true_pos > 0, tp / true_pos, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    accuracy = float(tp.sum() / total) if total else 0.0
    return TaskMetrics(accuracy, float(precision.mean()), float(recall.mean()), float(f1.mean()), cm)


@dataclass
class MetricsReport:
    tasks: list[TaskMetrics]
    config_hash: str = ""
    wall_clock: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        """Machine-readable records; wall-clock time is left out so reruns compare equal."""
        buf = io.StringIO()
        buf.write("task,accuracy,precision,recall,f1,config_hash\n")
        for k, m in enumerate(self.tasks):
            buf.write(f"{k},{m.accuracy:.6f},{m.precision:.6f},{m.recall:.6f},{m.f1:.6f},{self.config_hash}\n")
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'task':>4}  {'Acc':>7}  {'Prec':>7}  {'Rec':>7}  {'F1':>7}"]
        for k, m in enumerate(self.tasks):
            lines.append(f"{k:>4}  " + "  ".join(f"{100 * v:7.2f}" for v in m.as_row()))
        for k, m in enumerate(self.tasks):
            lines.append(f"confusion matrix, task {k} (rows = true class):")
            lines.extend("  " + " ".join(f"{v:5d}" for v in row) for row in m.confusion)
        if self.config_hash:
            lines.append(f"config hash: {self.config_hash}")
        return "\n".join(lines) + "\n"
