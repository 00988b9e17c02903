"""Confusion matrices and per-class / macro classification metrics."""

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError


def confusion(preds, labels, num_classes):
    """Counts with rows = true class, columns = predicted class."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise DataError(f"{preds.size} predictions vs {labels.size} labels")
    for name, v in (("prediction", preds), ("label", labels)):
        if v.size and (v.min() < 0 or v.max() >= num_classes):
            raise DataError(f"{name} out of range [0, {num_classes}): min={v.min()} max={v.max()}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def _ratio(num, den):
    # empty denominators score 0
    return np.divide(num, den, out=np.zeros(num.shape, dtype=np.float64), where=den > 0)


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    per_class_accuracy: list
    precision: list
    recall: list
    f1: list
    support: list

    def to_dict(self, class_names=None):
        d = asdict(self)
        if class_names is not None:
            d["class_names"] = list(class_names)
        return d


def metrics(cm):
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise DataError(f"confusion matrix must be square, got shape {cm.shape}")
    if np.any(cm < 0):
        raise DataError("confusion matrix has negative counts")
    total = cm.sum()
    if total == 0:
        raise DataError("confusion matrix is empty")
    cm = cm.astype(np.int64)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    tn = total - tp - fp - fn
    f1 = _ratio(2 * tp, 2 * tp + fp + fn)
    return MetricsReport(
        accuracy=float(np.trace(cm) / total),
        macro_f1=math.fsum(f1.tolist()) / len(f1),  # correctly rounded, independent of summation order
        per_class_accuracy=((tp + tn) / total).tolist(),
        precision=_ratio(tp, tp + fp).tolist(),
        recall=_ratio(tp, tp + fn).tolist(),
        f1=f1.tolist(),
        support=cm.sum(axis=1).tolist(),
    )


def write_confusion_csv(path, cm, class_names):
    """C x C table; header row and first column carry class names."""
    cm = np.asarray(cm)
    if len(class_names) != cm.shape[0]:
        raise DataError(f"{len(class_names)} class names for a {cm.shape[0]}-class matrix")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + list(class_names))
        for name, row in zip(class_names, cm):
            w.writerow([name] + [int(v) for v in row])


def read_confusion_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    return np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64), names


def write_metrics_json(path, cm, report, class_names):
    payload = {"confusion": np.asarray(cm).tolist(), **report.to_dict(class_names)}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
