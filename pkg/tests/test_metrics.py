"""Segmentation metrics against a pixel-counting oracle, plus band-sweep AUC."""

import numpy as np
import pytest

from perfuseg.errors import AlignmentError, UndefinedMetricError
from perfuseg.metrics import (
    EVALUATED_CLASSES,
    ClassMetrics,
    auc_band_sweep,
    confusion_and_scalars,
)
from perfuseg.volume import TissueClass

from oracles import confusion_oracle

LABELS = np.array([0, 76, 150, 255], dtype=np.uint8)


def _random_maps(rng):
    pred = rng.choice(LABELS, size=(32, 32))
    truth = rng.choice(LABELS, size=(32, 32))
    if not (truth != 255).any():  # ensure evaluable
        truth[0, 0] = 0
    return pred, truth


def test_matches_pixel_counting_oracle_on_100_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pred, truth = _random_maps(rng)
        report = confusion_and_scalars(pred, truth)
        for cls in EVALUATED_CLASSES:
            want = confusion_oracle(pred, truth, cls.value)
            got = report.per_class[cls]
            assert (got.tp, got.fp, got.tn, got.fn) == want
            tp, fp, tn, fn = want
            for name, num, den in (
                ("dice", 2 * tp, 2 * tp + fp + fn),
                ("sensitivity", tp, tp + fn),
                ("specificity", tn, tn + fp),
                ("precision", tp, tp + fp),
                ("accuracy", tp + tn, tp + tn + fp + fn),
            ):
                value = getattr(got, name)
                if den == 0:
                    assert value is None
                else:
                    assert value == num / den


def test_perfect_prediction_metrics():
    rng = np.random.default_rng(1)
    truth = rng.choice(LABELS, size=(32, 32))
    report = confusion_and_scalars(truth.copy(), truth)
    for cls in EVALUATED_CLASSES:
        m = report.per_class[cls]
        if (truth[truth != 255] == cls.value).any():
            assert m.dice == 1.0 and m.sensitivity == 1.0
        else:
            assert m.dice is None  # class absent: undefined, not zero


def test_disjoint_prediction_dice_zero():
    truth = np.full((16, 16), 76, dtype=np.uint8)
    pred = np.full((16, 16), 150, dtype=np.uint8)
    report = confusion_and_scalars(pred, truth)
    assert report.per_class[TissueClass.PENUMBRA].dice == 0.0


def test_background_truth_pixels_excluded():
    truth = np.full((8, 8), 255, dtype=np.uint8)
    truth[0, 0] = 76
    pred = np.full((8, 8), 76, dtype=np.uint8)
    report = confusion_and_scalars(pred, truth)
    m = report.per_class[TissueClass.PENUMBRA]
    assert (m.tp, m.fp, m.tn, m.fn) == (1, 0, 0, 0)
    assert report.evaluated_pixels == 1


def test_shape_mismatch_and_empty_eval():
    with pytest.raises(AlignmentError):
        confusion_and_scalars(np.zeros((4, 4), np.uint8), np.zeros((4, 5), np.uint8))
    allbg = np.full((4, 4), 255, dtype=np.uint8)
    with pytest.raises(UndefinedMetricError):
        confusion_and_scalars(allbg, allbg)


def test_auc_perfect_prediction_is_one():
    truth = np.full((32, 32), 0, dtype=np.uint8)
    truth[8:16, 8:16] = 150
    pred = truth.astype(np.float64)
    assert auc_band_sweep(pred, truth, TissueClass.CORE) == pytest.approx(1.0)


def test_auc_uniform_prediction_is_half():
    rng = np.random.default_rng(2)
    truth = np.where(rng.random((64, 64)) < 0.3, 150, 0).astype(np.uint8)
    pred = rng.uniform(0, 255, (64, 64))
    auc = auc_band_sweep(pred, truth, TissueClass.CORE)
    assert auc == pytest.approx(0.5, abs=0.05)


def test_auc_monotone_under_degradation():
    rng = np.random.default_rng(3)
    truth = np.where(rng.random((64, 64)) < 0.3, 150, 0).astype(np.uint8)
    clean = truth.astype(np.float64)
    noisy = clean + rng.normal(0, 60, clean.shape)
    assert auc_band_sweep(clean, truth, TissueClass.CORE) > auc_band_sweep(
        noisy, truth, TissueClass.CORE
    )


def test_auc_absent_class_undefined():
    truth = np.zeros((8, 8), dtype=np.uint8)
    with pytest.raises(UndefinedMetricError):
        auc_band_sweep(truth.astype(float), truth, TissueClass.CORE)


def test_auc_shape_mismatch():
    with pytest.raises(AlignmentError):
        auc_band_sweep(np.zeros((4, 4)), np.zeros((5, 4), np.uint8), TissueClass.CORE)


def test_class_metrics_zero_denominators_are_none():
    m = ClassMetrics(tp=0, fp=0, tn=5, fn=0)
    assert m.dice is None and m.sensitivity is None and m.precision is None
    assert m.specificity == 1.0
