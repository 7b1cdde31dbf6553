"""Perfusion parametric maps and literature threshold baselines.

The maps are deliberately simple proxies computed straight from the
time-attenuation curves (no deconvolution): TTP is the argmax time, the
CBV proxy is the area under the baseline-subtracted curve, the CBF proxy
is the maximum discrete upslope, and the Tmax proxy is the pixel's TTP
minus an automatic arterial reference (the mean curve of the
earliest-peaking 1% of in-mask pixels).  Relative maps (rCBV, rCBF) are
percentages of the contralateral-hemisphere median, mirrored across the
vertical midline.  The proxies preserve the ordinal structure the
threshold rules need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetricError, ValidationError
from .volume import CtpVolume


@dataclass
class ParametricMaps:
    """Per-slice maps, each (S, H, W) float32; `valid` flags usable pixels."""

    ttp: np.ndarray  # seconds
    cbv: np.ndarray  # area-under-curve units
    cbf: np.ndarray  # max-slope units
    tmax: np.ndarray  # seconds
    rcbv: np.ndarray  # percent of contralateral median
    rcbf: np.ndarray  # percent of contralateral median
    valid: np.ndarray  # bool

    def map_named(self, name: str) -> np.ndarray:
        try:
            return getattr(self, name)
        except AttributeError:
            raise ValidationError(f"unknown parametric map {name!r}") from None

    MAP_NAMES = ("ttp", "cbv", "cbf", "tmax", "rcbv", "rcbf")


@dataclass(frozen=True)
class ThresholdRule:
    rule_id: str
    target: str  # "core" | "penumbra"
    # list of (map name, op, threshold); clauses are ANDed
    clauses: tuple
    citation: str


RULES: dict[str, ThresholdRule] = {
    rule.rule_id: rule
    for rule in (
        ThresholdRule("wintermark_core", "core", (("rcbv", "<", 33.0),), "Wintermark"),
        ThresholdRule("campbell_penumbra", "penumbra", (("tmax", ">", 6.0),), "Campbell"),
        ThresholdRule(
            "campbell_core", "core", (("rcbf", "<", 31.0), ("ttp", ">", 4.0)), "Campbell"
        ),
        ThresholdRule("cereda_penumbra", "penumbra", (("tmax", ">", 4.0),), "Cereda"),
        ThresholdRule("cereda_core", "core", (("rcbf", "<", 38.0),), "Cereda"),
        ThresholdRule("ma_lin_penumbra", "penumbra", (("tmax", ">", 6.0),), "Ma/Lin"),
        ThresholdRule("ma_lin_core", "core", (("rcbf", "<", 30.0),), "Ma/Lin"),
    )
}


def _relative_map(value: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Percent of the contralateral-hemisphere median, mirroring across the
    vertical midline; assumes (S, H, W)."""
    s, h, w = value.shape
    half = w // 2
    out = np.zeros_like(value, dtype=np.float64)
    for si in range(s):
        for left in (True, False):
            cols = slice(0, half) if left else slice(half, w)
            other = slice(half, w) if left else slice(0, half)
            contra = value[si][:, other][valid[si][:, other]]
            if contra.size == 0:
                raise UndefinedMetricError(
                    f"slice {si}: empty contralateral hemisphere; relative maps unavailable"
                )
            med = float(np.median(contra))
            if med == 0.0:
                raise UndefinedMetricError(
                    f"slice {si}: zero contralateral median; relative maps unavailable"
                )
            out[si][:, cols] = 100.0 * value[si][:, cols] / med
    out[~valid] = 0.0
    return out.astype(np.float32)


def compute_maps(volume: CtpVolume, mask: np.ndarray,
                 aif_fraction: float = 0.01) -> ParametricMaps:
    """Compute all proxy maps for a preprocessed (registered, stripped)
    volume with brain masks (S, H, W)."""
    vox = volume.voxels.astype(np.float64)  # (T, S, H, W)
    t, s, h, w = vox.shape
    if mask.shape != (s, h, w):
        raise ValidationError(f"mask shape {mask.shape} does not match volume {(s, h, w)}")
    dt = volume.frame_interval

    times = np.arange(t) * dt
    ttp = times[np.argmax(vox, axis=0)].astype(np.float32)

    flat = np.ptp(vox, axis=0) == 0.0
    valid = mask & ~flat
    if not valid.any():
        raise UndefinedMetricError("no valid in-mask pixels; maps unavailable")

    # baseline = per-pixel mean over the pre-bolus frames; bolus arrival is
    # the first frame where the mean in-mask curve rises 1% of its total
    # swing above the first frame (1% so the early arterial rise counts as
    # bolus, keeping arterial baselines clean)
    mean_curve = vox[:, valid].mean(axis=1)
    swing = mean_curve.max() - mean_curve[0]
    arrival = int(np.argmax(mean_curve > mean_curve[0] + 0.01 * swing)) if swing > 0 else t
    n_base = max(1, arrival)
    baseline = vox[:n_base].mean(axis=0)
    cbv = ((vox - baseline[None]).sum(axis=0) * dt).astype(np.float32)

    if t < 2:
        raise ValidationError("need at least 2 frames for slope-based maps")
    cbf = (np.diff(vox, axis=0).max(axis=0) / dt).astype(np.float32)

    # arterial reference: mean curve of the earliest-peaking fraction
    in_ttp = ttp[valid]
    if in_ttp.size == 0:
        raise UndefinedMetricError("no valid in-mask pixels; maps unavailable")
    n_aif = max(1, int(round(aif_fraction * in_ttp.size)))
    order = np.argsort(in_ttp, kind="stable")[:n_aif]
    curves = vox.reshape(t, -1)[:, np.flatnonzero(valid.ravel())[order]]
    aif_ttp = float(times[int(np.argmax(curves.mean(axis=1)))])
    tmax = (ttp - aif_ttp).astype(np.float32)

    rcbv = _relative_map(cbv.astype(np.float64), valid)
    rcbf = _relative_map(cbf.astype(np.float64), valid)

    for arr in (ttp, cbv, cbf, tmax):
        arr[~valid] = 0.0
    return ParametricMaps(ttp=ttp, cbv=cbv, cbf=cbf, tmax=tmax,
                          rcbv=rcbv, rcbf=rcbf, valid=valid)


def apply_rule(maps: ParametricMaps, rule: ThresholdRule | str) -> np.ndarray:
    """Evaluate a threshold rule pixelwise; returns a bool mask, False
    outside the valid region."""
    if isinstance(rule, str):
        if rule not in RULES:
            raise ValidationError(f"unknown rule {rule!r}; expected one of {sorted(RULES)}")
        rule = RULES[rule]
    out = maps.valid.copy()
    for map_name, op, threshold in rule.clauses:
        value = maps.map_named(map_name)
        if op == "<":
            out &= value < threshold
        elif op == ">":
            out &= value > threshold
        else:
            raise ValidationError(f"unknown comparison {op!r} in rule {rule.rule_id}")
    return out


def evaluate_clauses(clauses, named_maps: dict[str, np.ndarray],
                     domain: np.ndarray) -> np.ndarray:
    """Evaluate rule clauses against plain arrays (used to derive the
    analytically engineered region for each rule on the phantom)."""
    out = domain.copy()
    for map_name, op, threshold in clauses:
        value = named_maps[map_name]
        out &= (value < threshold) if op == "<" else (value > threshold)
    return out
