"""Synthetic 4D CT-perfusion cohort generator.

Each phantom patient is a circular "brain" with a bright skull ring, a
pair of static dark ventricles (so frames have rotationally asymmetric
structure even before the bolus arrives), a small early-peaking artery
disk (the automatic arterial-reference target), and a nested
penumbra/core lesion in one hemisphere.  Every tissue class follows a
peak-normalized gamma-variate time-attenuation curve; the lesion classes
are delayed and damped versions of the healthy curve, with parameters
chosen so each literature threshold rule is satisfied exactly by one
engineered region.  Optional per-frame rigid jitter is recorded so
registration can be tested against known transforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .param_maps import RULES, evaluate_clauses
from .preprocess import RigidTransform, warp_rigid
from .volume import CtpVolume, TissueClass


def gamma_variate(t, amplitude: float, t0: float, alpha: float, beta: float):
    """Peak-normalized gamma-variate bolus: 0 for t <= t0, peak `amplitude`
    at t = t0 + alpha*beta."""
    if alpha <= 0 or beta <= 0:
        raise ValidationError(f"gamma_variate needs alpha, beta > 0; got {alpha}, {beta}")
    t = np.asarray(t, dtype=np.float64)
    rel = t - t0
    out = np.zeros_like(rel)
    pos = rel > 0
    u = rel[pos] / (alpha * beta)
    out[pos] = amplitude * u**alpha * np.exp(alpha - rel[pos] / beta)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class CurveParams:
    amplitude: float
    t0: float
    alpha: float = 2.0
    beta: float = 1.5
    offset: float = 0.0  # static shift added to the baseline level

    @property
    def ttp(self) -> float:
        return self.t0 + self.alpha * self.beta

    @property
    def integral(self) -> float:
        """Closed-form area under the peak-normalized curve."""
        return (
            self.amplitude
            * math.exp(self.alpha)
            * self.beta
            * math.gamma(self.alpha + 1.0)
            / self.alpha**self.alpha
        )


@dataclass(frozen=True)
class PhantomSpec:
    n_patients: int = 8
    n_slices: int = 4
    size: int = 128
    n_frames: int = 30
    frame_interval: float = 1.0
    baseline: float = 50.0
    skull_intensity: float = 2000.0
    healthy: CurveParams = field(default_factory=lambda: CurveParams(1500.0, 4.0))
    penumbra_delay: float = 4.0
    penumbra_amp_fraction: float = 0.4
    core_delay: float = 6.0
    core_amp_fraction: float = 0.1
    artery_t0: float = 2.0
    artery_amp_fraction: float = 3.0
    ventricle_offset: float = -30.0
    marker_offset: float = 400.0  # static bright calcification-like dots
    noise_sigma: float = 2.0
    jitter_max_shift: float = 0.0  # pixels; 0 disables jitter
    jitter_max_angle: float = 0.0  # degrees
    seed: int = 0

    def curve_for(self, tissue: str) -> CurveParams:
        h = self.healthy
        if tissue == "healthy":
            return h
        if tissue == "penumbra":
            return replace(h, amplitude=h.amplitude * self.penumbra_amp_fraction,
                           t0=h.t0 + self.penumbra_delay)
        if tissue == "core":
            return replace(h, amplitude=h.amplitude * self.core_amp_fraction,
                           t0=h.t0 + self.core_delay)
        if tissue == "artery":
            return replace(h, amplitude=h.amplitude * self.artery_amp_fraction,
                           t0=self.artery_t0)
        if tissue == "ventricle":
            return replace(h, offset=self.ventricle_offset)
        if tissue == "marker":
            return replace(h, offset=self.marker_offset)
        raise ValidationError(f"unknown tissue {tissue!r}")

    def validate(self) -> None:
        if self.n_patients < 1 or self.n_slices < 1 or self.n_frames < 2:
            raise ValidationError("cohort dimensions must be positive (and n_frames >= 2)")
        if self.size < 32:
            raise ValidationError("phantom size must be at least 32")
        if not (0 < self.core_amp_fraction < self.penumbra_amp_fraction <= 1.0):
            raise ValidationError(
                "need 0 < core amplitude fraction < penumbra amplitude fraction <= 1"
            )
        if self.penumbra_delay <= 0 or self.core_delay <= self.penumbra_delay:
            raise ValidationError("need 0 < penumbra delay < core delay")
        if self.artery_t0 >= self.healthy.t0:
            raise ValidationError("artery bolus must arrive before the healthy bolus")


@dataclass
class PhantomPatient:
    volume: CtpVolume
    labels: np.ndarray  # (S, H, W) uint8 in {0, 76, 150, 255}
    brain_masks: np.ndarray  # (S, H, W) bool, interior without skull
    analytic_maps: dict  # name -> (S, H, W) float32
    rule_regions: dict  # rule id -> (S, H, W) bool
    transforms: list  # per slice: list of injected RigidTransform per frame


def _ellipse(yy, xx, cy, cx, ry, rx) -> np.ndarray:
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _patient_geometry(spec: PhantomSpec, rng: np.random.Generator):
    """Class masks for one patient; the same geometry is reused on every
    slice with a small per-slice lesion scale factor applied later."""
    n = spec.size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    cy = cx = (n - 1) / 2.0
    brain_r = 0.42 * n
    skull_w = max(2.0, 0.03 * n)

    r = np.hypot(yy - cy, xx - cx)
    interior = r < brain_r
    skull = (r >= brain_r) & (r < brain_r + skull_w)

    side = 1.0 if rng.integers(2) else -1.0  # lesion hemisphere
    les_cy = cy + float(rng.uniform(-0.08, 0.12)) * n
    les_cx = cx + side * float(rng.uniform(0.22, 0.26)) * n
    pen_ry = float(rng.uniform(0.11, 0.13)) * n
    pen_rx = float(rng.uniform(0.10, 0.12)) * n
    penumbra = _ellipse(yy, xx, les_cy, les_cx, pen_ry, pen_rx)
    core = _ellipse(yy, xx, les_cy, les_cx, 0.55 * pen_ry, 0.55 * pen_rx)

    if not (core & ~penumbra).sum() == 0:
        raise ValidationError("core must nest inside penumbra")
    if (penumbra & ~interior).any():
        raise ValidationError("lesion must nest inside the brain interior")
    mid = n // 2
    on_left = les_cx < mid
    cols = np.flatnonzero(penumbra.any(axis=0))
    if (on_left and cols.max() >= mid) or (not on_left and cols.min() < mid):
        raise ValidationError("lesion must stay within one hemisphere")

    artery = _ellipse(yy, xx, cy - 0.24 * n, cx, 0.055 * n, 0.055 * n) & interior
    vent = (
        _ellipse(yy, xx, cy + 0.02 * n, cx - 0.075 * n, 0.11 * n, 0.035 * n)
        | _ellipse(yy, xx, cy + 0.02 * n, cx + 0.075 * n, 0.11 * n, 0.035 * n)
    ) & interior

    # static bright dots at asymmetric spots well clear of the possible
    # lesion band; they anchor rotation estimation at every time frame
    marker = (
        _ellipse(yy, xx, cy - 0.30 * n, cx + 0.12 * n, 0.02 * n, 0.02 * n)
        | _ellipse(yy, xx, cy + 0.30 * n, cx - 0.08 * n, 0.02 * n, 0.02 * n)
    ) & interior

    # precedence: core > penumbra > artery > marker > ventricle > healthy
    penumbra_only = penumbra & ~core
    artery &= ~penumbra
    marker &= ~(penumbra | artery)
    vent &= ~(penumbra | artery | marker)
    healthy = interior & ~(penumbra | artery | marker | vent)
    return {
        "interior": interior,
        "skull": skull,
        "core": core,
        "penumbra": penumbra_only,
        "artery": artery,
        "marker": marker,
        "ventricle": vent,
        "healthy": healthy,
    }


def _analytic_maps(spec: PhantomSpec, geo: dict) -> dict:
    """Noise-free per-class map values painted onto the geometry."""
    n = spec.size
    healthy = spec.curve_for("healthy")
    artery_ttp = spec.curve_for("artery").ttp
    maps = {name: np.zeros((n, n), dtype=np.float32)
            for name in ("ttp", "cbv", "cbf", "tmax", "rcbv", "rcbf")}
    fractions = {"healthy": 1.0, "ventricle": 1.0, "marker": 1.0,
                 "penumbra": spec.penumbra_amp_fraction,
                 "core": spec.core_amp_fraction,
                 "artery": spec.artery_amp_fraction}
    for tissue, frac in fractions.items():
        region = geo[tissue]
        curve = spec.curve_for(tissue)
        maps["ttp"][region] = curve.ttp
        maps["tmax"][region] = curve.ttp - artery_ttp
        maps["cbv"][region] = curve.integral
        maps["cbf"][region] = frac  # proxy units; ratios are what matter
        maps["rcbv"][region] = 100.0 * curve.integral / healthy.integral
        maps["rcbf"][region] = 100.0 * frac
    return maps


def _rule_regions(maps: dict, geo: dict) -> dict:
    domain = geo["interior"]
    return {
        rule_id: evaluate_clauses(rule.clauses, maps, domain)
        for rule_id, rule in RULES.items()
    }


def generate_patient(spec: PhantomSpec, index: int) -> PhantomPatient:
    spec.validate()
    rng = np.random.default_rng([spec.seed, index])
    geo = _patient_geometry(spec, rng)
    n, t, s = spec.size, spec.n_frames, spec.n_slices
    times = np.arange(t) * spec.frame_interval

    # noise-free slice template: every class follows its curve
    template = np.zeros((t, n, n), dtype=np.float64)
    for tissue in ("healthy", "ventricle", "marker", "penumbra", "core", "artery"):
        curve = spec.curve_for(tissue)
        series = spec.baseline + curve.offset + gamma_variate(
            times, curve.amplitude, curve.t0, curve.alpha, curve.beta
        )
        template[:, geo[tissue]] = series[:, None]
    template[:, geo["skull"]] = spec.skull_intensity

    analytic = _analytic_maps(spec, geo)
    rules = _rule_regions(analytic, geo)

    labels = np.full((n, n), TissueClass.BACKGROUND.value, dtype=np.uint8)
    labels[geo["interior"]] = TissueClass.BRAIN.value
    labels[geo["penumbra"]] = TissueClass.PENUMBRA.value
    labels[geo["core"]] = TissueClass.CORE.value

    voxels = np.empty((t, s, n, n), dtype=np.float32)
    transforms: list[list[RigidTransform]] = []
    jitter_on = spec.jitter_max_shift > 0 or spec.jitter_max_angle > 0
    for si in range(s):
        slice_transforms = [RigidTransform(0.0, 0.0, 0.0)]
        voxels[0, si] = template[0]
        for ti in range(1, t):
            frame = template[ti]
            tr = RigidTransform(0.0, 0.0, 0.0)
            if jitter_on:
                tr = RigidTransform(
                    angle_deg=float(rng.uniform(-spec.jitter_max_angle, spec.jitter_max_angle)),
                    dy=float(rng.uniform(-spec.jitter_max_shift, spec.jitter_max_shift)),
                    dx=float(rng.uniform(-spec.jitter_max_shift, spec.jitter_max_shift)),
                )
                frame = warp_rigid(frame.astype(np.float32), tr.angle_deg, tr.dy, tr.dx)
            voxels[ti, si] = frame
            slice_transforms.append(tr)
        transforms.append(slice_transforms)
    if spec.noise_sigma > 0:
        voxels += rng.normal(0.0, spec.noise_sigma, size=voxels.shape).astype(np.float32)

    volume = CtpVolume(
        patient_id=f"p{index:02d}",
        voxels=voxels,
        frame_interval=spec.frame_interval,
    )
    tile = lambda a: np.repeat(a[None], s, axis=0)  # noqa: E731 — same geometry per slice
    return PhantomPatient(
        volume=volume,
        labels=tile(labels),
        brain_masks=tile(geo["interior"]),
        analytic_maps={k: tile(v) for k, v in analytic.items()},
        rule_regions={k: tile(v) for k, v in rules.items()},
        transforms=transforms,
    )


def generate_cohort(spec: PhantomSpec) -> list[PhantomPatient]:
    return [generate_patient(spec, i) for i in range(spec.n_patients)]
