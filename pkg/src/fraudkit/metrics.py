"""Ranking, threshold and correlation metrics for binary risk scores.

Conventions used throughout:

* a row is flagged positive iff ``score >= threshold``;
* tied scores form one group on every curve (no arbitrary ordering);
* precision is 0 with no predicted positives, F1 is 0 when P + R = 0.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from fraudkit.errors import ContractError, DataError
from fraudkit.matrix import FeatureMatrix

logger = logging.getLogger(__name__)


def _inputs(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or s.shape != y.shape:
        raise ContractError("scores and labels must be 1-D and equally long")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0/1")
    return s, y.astype(np.int64)


def _both_classes(y):
    if y.sum() == 0 or y.sum() == len(y):
        raise DataError("metric needs both classes present")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(precision=self.precision, recall=self.recall, f1=self.f1)
        return d


@dataclass
class CurveData:
    kind: str
    columns: tuple[str, ...]
    points: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.points[:, self.columns.index(name)]

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.points.tolist():
                w.writerow([repr(v) for v in row])


def roc_auc(scores, labels) -> float:
    """Mann-Whitney U / (n+ n-), average ranks for ties."""
    s, y = _inputs(scores, labels)
    _both_classes(y)
    n1 = int(y.sum())
    n0 = len(y) - n1
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def _groups(s, y):
    """Cumulative (tp, fp) after each distinct score, highest score first."""
    order = np.argsort(-s, kind="stable")
    ss, ys = s[order], y[order]
    last = np.r_[np.flatnonzero(ss[1:] != ss[:-1]), len(ss) - 1]
    tp = np.cumsum(ys)[last]
    fp = (last + 1) - tp
    return ss[last], tp, fp


def roc_curve(scores, labels) -> CurveData:
    s, y = _inputs(scores, labels)
    _both_classes(y)
    thr, tp, fp = _groups(s, y)
    n1, n0 = int(y.sum()), len(y) - int(y.sum())
    pts = np.column_stack([
        np.r_[0.0, fp / n0],
        np.r_[0.0, tp / n1],
        np.r_[np.inf, thr],
    ])
    return CurveData("roc", ("fpr", "tpr", "threshold"), pts)


def pr_curve(scores, labels) -> CurveData:
    s, y = _inputs(scores, labels)
    if y.sum() == 0:
        raise DataError("precision-recall curve needs at least one positive")
    thr, tp, fp = _groups(s, y)
    pts = np.column_stack([tp / y.sum(), tp / (tp + fp), thr])
    return CurveData("pr", ("recall", "precision", "threshold"), pts)


def curve_area(curve: CurveData) -> float:
    """Trapezoidal area under an ROC polyline."""
    x, yv = curve.column("fpr"), curve.column("tpr")
    return float(np.sum(np.diff(x) * (yv[1:] + yv[:-1]) / 2.0))


def average_precision(scores, labels) -> float:
    """Non-interpolated AP: sum over tie groups of (R_n - R_{n-1}) * P_n."""
    pr = pr_curve(scores, labels)
    r, p = pr.column("recall"), pr.column("precision")
    return float(np.sum(np.diff(np.r_[0.0, r]) * p))


def precision_at_k(scores, labels, k: int, ids: Sequence[int] | None = None) -> float:
    """Share of positives among the k highest scores.

    Equal scores are ordered by ascending ``ids`` (row order if omitted).
    """
    s, y = _inputs(scores, labels)
    if not 1 <= k <= len(s):
        raise ContractError(f"k must lie in [1, {len(s)}], got {k}")
    ids = np.arange(len(s)) if ids is None else np.asarray(ids)
    order = np.lexsort((ids, -s))
    return float(y[order[:k]].sum() / k)


def confusion_at(scores, labels, threshold: float) -> ConfusionMatrix:
    s, y = _inputs(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    return ConfusionMatrix(tp, fp, tn, fn, float(threshold))


def default_grid(step: float = 0.01) -> np.ndarray:
    n = int(round(1.0 / step))
    return np.arange(n + 1) / n


def threshold_sweep(scores, labels, grid=None) -> CurveData:
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if len(grid) == 0:
        raise ContractError("threshold grid is empty")
    rows = []
    for t in grid.tolist():
        cm = confusion_at(scores, labels, t)
        rows.append([t, cm.tp, cm.fp, cm.tn, cm.fn, cm.precision, cm.recall, cm.f1])
    return CurveData("threshold_sweep",
                     ("threshold", "tp", "fp", "tn", "fn", "precision", "recall", "f1"),
                     np.asarray(rows, dtype=np.float64))


def parse_objective(objective) -> tuple[str, float | None]:
    """Accepts 'max_f1', 'min_recall:0.9', 'min_precision:0.5' or a tuple."""
    if isinstance(objective, tuple):
        name, val = objective
    elif ":" in objective:
        name, raw = objective.split(":", 1)
        val = float(raw)
    else:
        name, val = objective, None
    if name == "max_f1":
        return name, None
    if name in ("min_recall", "min_precision") and val is not None:
        return name, float(val)
    raise ContractError(f"unknown threshold objective {objective!r}")


def select_threshold(val_scores, val_labels, objective="max_f1") -> float:
    """Pick a decision threshold among the distinct validation scores.

    * ``max_f1``: highest F1;
    * ``min_recall r``: the highest threshold whose recall is at least r;
    * ``min_precision p``: highest recall among thresholds with precision
      at least p.

    Ties always resolve to the highest threshold (fewest alerts).
    """
    name, target = parse_objective(objective)
    s, y = _inputs(val_scores, val_labels)
    if y.sum() == 0:
        raise DataError("threshold selection needs at least one positive")
    thr, tp, fp = _groups(s, y)  # descending thresholds
    P = y.sum()
    recall = tp / P
    precision = tp / (tp + fp)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(denom), where=denom > 0)
    if name == "max_f1":
        # argmax returns the first hit, i.e. the highest threshold
        return float(thr[int(np.argmax(f1))])
    if name == "min_recall":
        ok = recall >= target
        if not ok.any():
            raise ContractError(f"recall >= {target} unreachable; best achievable {float(recall.max())!r}")
        return float(thr[int(np.argmax(ok))])
    ok = precision >= target
    if not ok.any():
        raise ContractError(
            f"precision >= {target} unreachable; best achievable {float(precision.max())!r}"
        )
    best = np.where(ok, recall, -1.0)
    return float(thr[int(np.argmax(best))])


def feature_label_correlation(matrix: FeatureMatrix, labels) -> dict[str, float | None]:
    """Pearson r of every column against the 0/1 label.

    Zero-variance columns map to ``None``.
    """
    y = np.asarray(labels, dtype=np.float64)
    if len(y) != len(matrix):
        raise ContractError("labels and matrix rows differ in length")
    yc = y - y.mean()
    sy = math.sqrt(float(yc @ yc))
    out = {}
    for j, name in enumerate(matrix.columns):
        x = matrix.values[:, j]
        xc = x - x.mean()
        sx = math.sqrt(float(xc @ xc))
        if sx == 0.0 or sy == 0.0:
            logger.info("column %r has zero variance; correlation undefined", name)
            out[name] = None
        else:
            out[name] = float((xc @ yc) / (sx * sy))
    return out
