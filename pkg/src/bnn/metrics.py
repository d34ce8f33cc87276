"""Classification error and calibration of predicted class probabilities.

The calibration curve pools every (example, class) pair: the predicted
probability of that class is binned (equal-width bins on [0, 1], last bin
closed on the right) and compared with how often that class is the true
label. The calibration MSE is the occupancy-weighted mean squared gap
between each bin's empirical frequency and its mean predicted probability.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .tensor import Tensor


def _check_labels(probs, labels):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2:
        raise DimensionError(f"expected an (n, classes) probability matrix, got shape {probs.shape}")
    if labels.shape != (probs.shape[0],):
        raise DimensionError(f"expected {probs.shape[0]} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ParameterError(f"labels must lie in [0, {probs.shape[1]})")
    return probs, labels.astype(np.int64)


def classification_error(probs, labels) -> float:
    """Fraction of rows whose argmax differs from the label (ties go to the lowest index)."""
    probs, labels = _check_labels(probs, labels)
    if probs.shape[0] == 0:
        raise ParameterError("classification_error of an empty batch")
    return float(np.mean(np.argmax(probs, axis=1) != labels))


@dataclass
class CalibrationCurve:
    n_bins: int
    bin_edges: Tensor
    bin_count: np.ndarray
    # NaN for empty bins
    mean_pred: Tensor
    freq_true: Tensor

    @property
    def occupied(self) -> np.ndarray:
        return self.bin_count > 0

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count", "mean_pred", "freq_true"])
        for b in range(self.n_bins):
            mp = "" if not self.bin_count[b] else repr(float(self.mean_pred[b]))
            ft = "" if not self.bin_count[b] else repr(float(self.freq_true[b]))
            w.writerow([repr(float(self.bin_edges[b])), repr(float(self.bin_edges[b + 1])),
                        int(self.bin_count[b]), mp, ft])
        return buf.getvalue()


def calibration_curve(probs, labels, n_bins: int = 10) -> CalibrationCurve:
    probs, labels = _check_labels(probs, labels)
    if n_bins < 2:
        raise ParameterError(f"n_bins must be >= 2, got {n_bins}")
    if probs.size == 0:
        raise ParameterError("calibration_curve of an empty batch")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    x = probs.reshape(-1)
    hits = np.zeros_like(probs)
    hits[np.arange(probs.shape[0]), labels] = 1.0
    hits = hits.reshape(-1)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, n_bins - 1)
    count = np.bincount(idx, minlength=n_bins)
    mean_pred = np.full(n_bins, np.nan)
    freq_true = np.full(n_bins, np.nan)
    order = np.argsort(idx, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(count)])
    for b in range(n_bins):
        if not count[b]:
            continue
        sel = order[bounds[b]:bounds[b + 1]]
        # exact sum shifted by the bin minimum: independent of example order, and a
        # bin of identical probabilities averages to exactly that value
        x0 = x[sel].min()
        mean_pred[b] = x0 + math.fsum(x[sel] - x0) / count[b]
        freq_true[b] = math.fsum(hits[sel]) / count[b]
    return CalibrationCurve(n_bins, edges, count, mean_pred, freq_true)


def calibration_mse(curve: CalibrationCurve) -> float:
    occ = curve.occupied
    if not occ.any():
        raise ParameterError("calibration_mse needs at least one non-empty bin")
    gap = curve.freq_true[occ] - curve.mean_pred[occ]
    w = curve.bin_count[occ]
    return float(np.sum(w * gap * gap) / np.sum(w))
