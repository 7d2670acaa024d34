"""Confusion matrices, OA / IoU / mIoU and report rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cloud import UNLABELED


def confusion_matrix(truth: np.ndarray, pred: np.ndarray, n_classes: int) -> np.ndarray:
    """Rows are ground truth, columns predictions. Unlabeled truth is skipped;
    an unlabeled prediction counts as a miss for its true class."""
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise ValueError(f"truth has {truth.size} labels, prediction {pred.size}")
    for name, arr in (("truth", truth), ("prediction", pred)):
        bad = (arr != UNLABELED) & ((arr < 0) | (arr >= n_classes))
        if bad.any():
            raise ValueError(f"{name} label {int(arr[bad][0])} outside 0..{n_classes - 1}")
    keep = truth != UNLABELED
    t, p = truth[keep], pred[keep]
    p = np.where(p == UNLABELED, n_classes, p)
    cm = np.bincount(t * (n_classes + 1) + p, minlength=n_classes * (n_classes + 1))
    return cm.reshape(n_classes, n_classes + 1)


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Scores derived from a confusion matrix (with a trailing 'unlabeled prediction' column)."""

    confusion: np.ndarray
    class_names: tuple[str, ...]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def oa(self) -> float:
        total = self.total
        return 100.0 * np.trace(self.confusion[:, : self.n_classes]) / total if total else float("nan")

    @property
    def iou(self) -> list[Optional[float]]:
        cm = self.confusion
        k = self.n_classes
        tp = np.diag(cm[:, :k])
        fn = cm.sum(axis=1) - tp
        fp = cm[:, :k].sum(axis=0) - tp
        denom = tp + fp + fn
        return [None if d == 0 else 100.0 * t / d for t, d in zip(tp, denom)]

    @property
    def miou(self) -> float:
        vals = [v for v in self.iou if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def miou_over(self, class_ids: Sequence[int]) -> float:
        vals = [self.iou[c] for c in class_ids if self.iou[c] is not None]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def counts(self) -> list[int]:
        return [int(v) for v in self.confusion.sum(axis=1)]

    def __add__(self, other: "EvalReport") -> "EvalReport":
        if self.class_names != other.class_names:
            raise ValueError("cannot pool reports over different class sets")
        return EvalReport(self.confusion + other.confusion, self.class_names)

    def to_dict(self) -> dict:
        return {
            "OA": round(self.oa, 2),
            "mIoU": round(self.miou, 2),
            "IoU": {n: (None if v is None else round(v, 2))
                    for n, v in zip(self.class_names, self.iou)},
            "counts": dict(zip(self.class_names, self.counts)),
            "confusion": self.confusion[:, : self.n_classes].tolist(),
            "unlabeled_predictions": self.confusion[:, self.n_classes].tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def evaluate(truth: np.ndarray, pred: np.ndarray, n_classes: int,
             class_names: Optional[Sequence[str]] = None) -> EvalReport:
    names = tuple(class_names) if class_names is not None else tuple(str(i) for i in range(n_classes))
    if len(names) != n_classes:
        raise ValueError("class name count differs from n_classes")
    return EvalReport(confusion_matrix(truth, pred, n_classes), names)


def report_from_confusion(confusion: np.ndarray, class_names: Sequence[str]) -> EvalReport:
    cm = np.asarray(confusion, dtype=np.int64)
    if cm.shape[1] == cm.shape[0]:
        cm = np.hstack([cm, np.zeros((len(cm), 1), dtype=np.int64)])
    return EvalReport(cm, tuple(class_names))


def _fmt(v: Optional[float]) -> str:
    return "n/a" if v is None or v != v else f"{v:.2f}"


def format_rows(class_names: Sequence[str],
                rows: Sequence[tuple[str, float, float, Sequence[Optional[float]]]]) -> str:
    """Aligned text table with columns ``OA | mIoU | <classes>``, 2 decimals, n/a for absent."""
    header = ["", "OA", "mIoU", *class_names]
    body = [[label, _fmt(oa), _fmt(miou), *(_fmt(v) for v in ious)]
            for label, oa, miou, ious in rows]
    widths = [max(len(line[i]) for line in [header, *body]) for i in range(len(header))]

    def line(cells: list[str]) -> str:
        out = [cells[0].ljust(widths[0]), "|"]
        out += [c.rjust(w) for c, w in zip(cells[1:3], widths[1:3])]
        out.append("|")
        out += [c.rjust(w) for c, w in zip(cells[3:], widths[3:])]
        return " ".join(out).rstrip()

    rule = "-" * len(line(header))
    return "\n".join([line(header), rule, *(line(b) for b in body)]) + "\n"


def format_table(rows: Sequence[tuple[str, EvalReport]]) -> str:
    if not rows:
        return ""
    return format_rows(rows[0][1].class_names,
                       [(label, r.oa, r.miou, r.iou) for label, r in rows])
