"""Confusion matrix and the segmentation scores derived from it."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .tensor import IGNORE_INDEX


class ConfusionMatrix:
    """``counts[i, j]`` = pixels of true class ``i`` predicted as ``j``."""

    def __init__(self, num_classes: int, counts=None):
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (num_classes, num_classes) or (counts < 0).any():
            raise DataError(f"confusion counts must be a non-negative {num_classes}x{num_classes} matrix")
        self.counts = counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, pred, truth, ignore_index=IGNORE_INDEX) -> "ConfusionMatrix":
        pred = np.asarray(pred)
        truth = np.asarray(truth)
        if pred.shape != truth.shape:
            raise DataError(f"prediction {pred.shape} and truth {truth.shape} shapes differ")
        k = self.num_classes
        valid = truth != ignore_index
        t = truth[valid].astype(np.int64)
        p = pred[valid].astype(np.int64)
        if t.size and (t.min() < 0 or t.max() >= k):
            raise DataError(f"truth label outside 0..{k - 1}")
        if p.size and (p.min() < 0 or p.max() >= k):
            raise DataError(f"prediction outside 0..{k - 1}")
        self.counts += np.bincount(t * k + p, minlength=k * k).reshape(k, k)
        return self

    def __add__(self, other):
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def to_csv(self, path):
        np.savetxt(path, self.counts, fmt="%d", delimiter=",")


def accumulate(cm: ConfusionMatrix, pred, truth) -> ConfusionMatrix:
    return cm.accumulate(pred, truth)


@dataclass
class MetricReport:
    oa: float
    aa: float
    kappa: float
    miou: float
    fwiou: float
    mean_f1: float
    precision: np.ndarray = field(repr=False)
    recall: np.ndarray = field(repr=False)
    f1: np.ndarray = field(repr=False)
    iou: np.ndarray = field(repr=False)
    support: np.ndarray = field(repr=False)

    def summary(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("oa", "aa", "kappa", "miou", "fwiou", "mean_f1")}

    def to_csv(self, path, class_names=None):
        k = len(self.support)
        names = class_names or [str(i) for i in range(k)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "precision", "recall", "f1", "iou", "support"])
            for i in range(k):
                w.writerow([names[i], _fmt(self.precision[i]), _fmt(self.recall[i]),
                            _fmt(self.f1[i]), _fmt(self.iou[i]), int(self.support[i])])
            w.writerow([])
            w.writerow(["oa", "aa", "kappa", "miou", "fwiou", "mean_f1"])
            w.writerow([_fmt(v) for v in self.summary().values()])


def _fmt(v):
    return "nan" if np.isnan(v) else f"{v:.10g}"


def compute_report(cm: ConfusionMatrix) -> MetricReport:
    """All scores from one confusion matrix.

    Classes with neither truth nor prediction pixels are left out of the
    class means. Kappa is 0 when chance agreement is 1.
    """
    c = cm.counts.astype(np.float64)
    n = c.sum()
    if n == 0:
        raise DataError("confusion matrix is empty")
    d = np.diag(c)
    rows = c.sum(axis=1)
    cols = c.sum(axis=0)
    union = rows + cols - d
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(rows > 0, d / rows, np.nan)
        precision = np.where(cols > 0, d / cols, np.nan)
        iou = np.where(union > 0, d / union, np.nan)
        pr = np.nan_to_num(precision) + np.nan_to_num(recall)
        f1 = np.where(pr > 0, 2 * np.nan_to_num(precision) * np.nan_to_num(recall) / pr, 0.0)
    present = rows > 0
    f1 = np.where(present | (cols > 0), f1, np.nan)
    oa = d.sum() / n
    pe = (rows * cols).sum() / n ** 2
    kappa = 0.0 if pe == 1 else (oa - pe) / (1 - pe)
    seen = union > 0
    return MetricReport(
        oa=float(oa),
        aa=float(recall[present].mean()),
        kappa=float(kappa),
        miou=float(iou[seen].mean()),
        fwiou=float((rows[seen] / n * iou[seen]).sum()),
        mean_f1=float(f1[present].mean()),
        precision=precision,
        recall=recall,
        f1=f1,
        iou=iou,
        support=rows.astype(np.int64),
    )
