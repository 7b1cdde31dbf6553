"""Confusion-based scalar metrics and the band-sweep AUC.

Background-labeled truth pixels are excluded from all confusion counts;
metrics whose denominator is zero are reported as "undefined" (None),
never coerced to 0, because silent zeros corrupt averages across folds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, UndefinedMetricError
from .volume import TissueClass

EVALUATED_CLASSES = (TissueClass.BRAIN, TissueClass.PENUMBRA, TissueClass.CORE)


@dataclass
class ClassMetrics:
    tp: int
    fp: int
    tn: int
    fn: int

    def _ratio(self, num: int, den: int) -> float | None:
        return num / den if den else None

    @property
    def dice(self) -> float | None:
        return self._ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn)

    @property
    def sensitivity(self) -> float | None:
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def specificity(self) -> float | None:
        return self._ratio(self.tn, self.tn + self.fp)

    @property
    def precision(self) -> float | None:
        return self._ratio(self.tp, self.tp + self.fp)

    @property
    def accuracy(self) -> float | None:
        return self._ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn)


@dataclass
class MetricReport:
    per_class: dict = field(default_factory=dict)  # TissueClass -> ClassMetrics
    evaluated_pixels: int = 0
    provenance: str = ""


def confusion_and_scalars(pred: np.ndarray, truth: np.ndarray,
                          classes=EVALUATED_CLASSES,
                          provenance: str = "") -> MetricReport:
    """One-vs-rest confusion per class over pixels whose truth is not
    background. `pred` and `truth` are label maps with values in
    {0, 76, 150, 255}."""
    if pred.shape != truth.shape:
        raise AlignmentError(f"label maps differ in shape: {pred.shape} vs {truth.shape}")
    keep = truth != TissueClass.BACKGROUND.value
    n = int(keep.sum())
    if n == 0:
        raise UndefinedMetricError("no non-background truth pixels to evaluate")
    p = pred[keep]
    t = truth[keep]
    report = MetricReport(evaluated_pixels=n, provenance=provenance)
    for cls in classes:
        pp = p == cls.value
        tt = t == cls.value
        report.per_class[cls] = ClassMetrics(
            tp=int(np.sum(pp & tt)),
            fp=int(np.sum(pp & ~tt)),
            tn=int(np.sum(~pp & ~tt)),
            fn=int(np.sum(~pp & tt)),
        )
    return report


def auc_band_sweep(pred: np.ndarray, truth: np.ndarray, cls: TissueClass,
                   max_halfwidth: int = 128) -> float:
    """AUC from an expanding symmetric band around the class's grayscale
    target: for half-widths w = 0..max_halfwidth a pixel is
    predicted-positive iff |pred - target| <= w.  The (FPR, TPR) points are
    integrated by trapezoid with (0,0) and (1,1) appended.  Background
    truth pixels are excluded."""
    if pred.shape != truth.shape:
        raise AlignmentError(f"maps differ in shape: {pred.shape} vs {truth.shape}")
    keep = truth != TissueClass.BACKGROUND.value
    t = truth[keep]
    positives = t == cls.value
    n_pos = int(positives.sum())
    n_neg = int(t.size - n_pos)
    if n_pos == 0:
        raise UndefinedMetricError(f"class {cls.name} absent from truth; AUC undefined")
    dist = np.abs(pred[keep].astype(np.float64) - float(cls.value))
    widths = np.arange(max_halfwidth + 1, dtype=np.float64)
    inside = dist[None, :] <= widths[:, None]  # (W, N)
    tpr = inside[:, positives].sum(axis=1) / n_pos
    fpr = (inside[:, ~positives].sum(axis=1) / n_neg) if n_neg else np.zeros_like(tpr)
    fpr = np.concatenate([[0.0], fpr, [1.0]])
    tpr = np.concatenate([[0.0], tpr, [1.0]])
    order = np.lexsort((tpr, fpr))
    return float(np.trapezoid(tpr[order], fpr[order]))
