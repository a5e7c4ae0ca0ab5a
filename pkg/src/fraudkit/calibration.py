"""Post hoc probability calibration and reliability summaries."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fraudkit.errors import ContractError, DataError


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ContractError("scores and labels must be 1-D and equally long")
    if not np.isfinite(s).all():
        raise DataError("scores must be finite")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0/1")
    if len(np.unique(y)) < 2:
        raise DataError("calibration needs both classes present")
    return s, y.astype(np.float64)


@dataclass(frozen=True)
class SigmoidCalibrator:
    """p = 1 / (1 + exp(a*s + b)); a < 0 for positively oriented scores."""

    a: float
    b: float
    converged: bool = True
    iterations: int = 0

    def apply(self, scores) -> np.ndarray:
        z = self.a * np.asarray(scores, dtype=np.float64) + self.b
        # expit(-z) without overflow warnings
        out = np.empty_like(z)
        pos = z >= 0
        ez = np.exp(-z[pos])
        out[pos] = ez / (1.0 + ez)
        out[~pos] = 1.0 / (1.0 + np.exp(z[~pos]))
        return out

    def to_dict(self) -> dict:
        return {"method": "sigmoid", "a": self.a, "b": self.b,
                "converged": self.converged, "iterations": self.iterations}


@dataclass(frozen=True)
class IsotonicCalibrator:
    """Nondecreasing step function; clamps outside the fitted score range."""

    breakpoints: np.ndarray
    values: np.ndarray

    def apply(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=np.float64)
        i = np.searchsorted(self.breakpoints, s, side="right") - 1
        return self.values[np.clip(i, 0, len(self.values) - 1)]

    def to_dict(self) -> dict:
        return {"method": "isotonic", "breakpoints": self.breakpoints.tolist(),
                "values": self.values.tolist()}


def _platt_objective(s, t, a, b):
    z = a * s + b
    # sum of cross-entropy terms, stable for either sign of z
    return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-np.abs(z))),
                                 (t - 1) * z + np.log1p(np.exp(-np.abs(z))))))


def fit_sigmoid(scores, labels, max_iter: int = 100, tol: float = 1e-10) -> SigmoidCalibrator:
    """Platt scaling by damped Newton with Platt's smoothed targets.

    Targets are (N+ + 1)/(N+ + 2) for positives and 1/(N- + 2) for
    negatives. Backtracking line search keeps each step a descent step.
    """
    s, y = _check_binary(scores, labels)
    n_pos = float(y.sum())
    n_neg = float(len(y) - n_pos)
    t = np.where(y == 1, (n_pos + 1) / (n_pos + 2), 1.0 / (n_neg + 2))
    a, b = 0.0, float(np.log((n_neg + 1) / (n_pos + 1)))
    fval = _platt_objective(s, t, a, b)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        z = a * s + b
        p = np.where(z >= 0, np.exp(-np.abs(z)) / (1 + np.exp(-np.abs(z))),
                     1 / (1 + np.exp(-np.abs(z))))
        q = 1 - p
        d2 = p * q
        h11 = float(np.sum(s * s * d2)) + 1e-12
        h22 = float(np.sum(d2)) + 1e-12
        h21 = float(np.sum(s * d2))
        d1 = t - p
        g1 = float(np.sum(s * d1))
        g2 = float(np.sum(d1))
        if np.hypot(g1, g2) < tol:
            converged = True
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= 1e-10:
            na, nb = a + step * da, b + step * db
            nf = _platt_objective(s, t, na, nb)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2
        else:
            # no further descent is representable; treat as converged
            converged = True
            break
    if a > 0:
        warnings.warn("sigmoid calibrator is decreasing in the score (a > 0); "
                      "scores look negatively oriented", RuntimeWarning, stacklevel=2)
    return SigmoidCalibrator(float(a), float(b), converged, it)


def pava(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted least-squares nondecreasing fit by pool-adjacent-violators."""
    means: list[float] = []
    wts: list[float] = []
    sizes: list[int] = []
    for v, w in zip(values.tolist(), weights.tolist()):
        means.append(v)
        wts.append(w)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            w2 = wts[-2] + wts[-1]
            m = (means[-2] * wts[-2] + means[-1] * wts[-1]) / w2
            sz = sizes[-2] + sizes[-1]
            del means[-1], wts[-1], sizes[-1]
            means[-1], wts[-1], sizes[-1] = m, w2, sz
    return np.repeat(means, sizes)


def fit_isotonic(scores, labels) -> IsotonicCalibrator:
    s, y = _check_binary(scores, labels)
    uniq, inv, counts = np.unique(s, return_inverse=True, return_counts=True)
    # identical scores are pooled first so the fit ignores input order
    sums = np.bincount(inv, weights=y)
    fitted = pava(sums / counts, counts.astype(np.float64))
    return IsotonicCalibrator(uniq, np.clip(fitted, 0.0, 1.0))


def apply(calibrator, scores) -> np.ndarray:
    return calibrator.apply(scores)


def calibrator_from_dict(d: dict):
    if d["method"] == "sigmoid":
        return SigmoidCalibrator(d["a"], d["b"], d.get("converged", True), d.get("iterations", 0))
    if d["method"] == "isotonic":
        return IsotonicCalibrator(np.asarray(d["breakpoints"], np.float64),
                                  np.asarray(d["values"], np.float64))
    raise ContractError(f"unknown calibrator method {d['method']!r}")


def fit_calibrator(method: str, scores, labels):
    if method == "sigmoid":
        return fit_sigmoid(scores, labels)
    if method == "isotonic":
        return fit_isotonic(scores, labels)
    raise ContractError(f"unknown calibration method {method!r}")


def brier_score(probabilities, labels) -> float:
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if len(p) == 0:
        raise DataError("brier score of an empty sample")
    if p.shape != y.shape:
        raise ContractError("probabilities and labels differ in length")
    if ((p < 0) | (p > 1)).any():
        raise DataError("probabilities must lie in [0, 1]")
    return float(np.mean((p - y) ** 2))


@dataclass(frozen=True)
class ReliabilityBin:
    lower: float
    upper: float
    mean_predicted: float | None
    empirical_frequency: float | None
    count: int


@dataclass(frozen=True)
class ReliabilityTable:
    bins: tuple[ReliabilityBin, ...]

    def rows(self) -> list[dict]:
        return [{"bin_lo": b.lower, "bin_hi": b.upper, "mean_pred": b.mean_predicted,
                 "emp_freq": b.empirical_frequency, "count": b.count} for b in self.bins]

    def max_gap(self) -> float:
        gaps = [abs(b.mean_predicted - b.empirical_frequency) for b in self.bins if b.count]
        return max(gaps) if gaps else 0.0

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "mean_pred", "emp_freq", "count"])
            for b in self.bins:
                w.writerow([repr(b.lower), repr(b.upper),
                            "" if b.mean_predicted is None else repr(b.mean_predicted),
                            "" if b.empirical_frequency is None else repr(b.empirical_frequency),
                            b.count])


def reliability_table(probabilities, labels, n_bins: int = 10) -> ReliabilityTable:
    """Equal-width bins on [0, 1], half-open except the last, which is closed."""
    if n_bins < 2:
        raise ContractError("n_bins must be >= 2")
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, n_bins - 1)
    bins = []
    for k in range(n_bins):
        m = idx == k
        c = int(m.sum())
        bins.append(ReliabilityBin(
            float(edges[k]), float(edges[k + 1]),
            float(p[m].mean()) if c else None,
            float(y[m].mean()) if c else None,
            c,
        ))
    return ReliabilityTable(tuple(bins))
