"""Core data model: 4D perfusion volumes, tissue classes and file formats.

A volume holds the full time-resolved scan of one patient as a float32
array indexed (t, s, y, x).  Label maps are plain uint8 arrays using the
4-value grayscale encoding {0, 76, 150, 255}.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import AlignmentError, FormatError, IoError, LabelEncodingError, ValidationError

CTPV_MAGIC = b"CTPV0001"

DEFAULT_SPACING_MM = 0.4258
DEFAULT_THICKNESS_MM = 5.0
DEFAULT_FRAME_INTERVAL_S = 1.0

EXPECTED_SLICE_RANGE = (13, 22)


class TissueClass(Enum):
    """One-of-four tissue classes with their grayscale target values."""

    BRAIN = 0
    PENUMBRA = 76
    CORE = 150
    BACKGROUND = 255

    @property
    def gray(self) -> int:
        return self.value


# Severity order used for tie-breaking when labeling tiles.
SEVERITY_ORDER = (
    TissueClass.CORE,
    TissueClass.PENUMBRA,
    TissueClass.BRAIN,
    TissueClass.BACKGROUND,
)

LABEL_VALUES = (0, 76, 150, 255)


@dataclass(frozen=True)
class CtpVolume:
    """One patient's 4D scan: voxels indexed (t, s, y, x)."""

    patient_id: str
    voxels: np.ndarray
    spacing: float = DEFAULT_SPACING_MM
    thickness: float = DEFAULT_THICKNESS_MM
    frame_interval: float = DEFAULT_FRAME_INTERVAL_S

    def __post_init__(self):
        v = self.voxels
        if v.ndim != 4:
            raise ValidationError(f"voxels must be 4D (t,s,y,x), got shape {v.shape}")
        if v.shape[0] < 1:
            raise ValidationError("volume needs at least one time frame")
        if not np.isfinite(v).all():
            raise ValidationError("volume contains NaN or Inf voxels")
        lo, hi = EXPECTED_SLICE_RANGE
        if not lo <= v.shape[1] <= hi:
            warnings.warn(
                f"patient {self.patient_id}: {v.shape[1]} slices is outside the "
                f"expected range [{lo}, {hi}]",
                stacklevel=2,
            )
        if v.dtype != np.float32:
            object.__setattr__(self, "voxels", v.astype(np.float32))

    @property
    def n_frames(self) -> int:
        return self.voxels.shape[0]

    @property
    def n_slices(self) -> int:
        return self.voxels.shape[1]

    @property
    def height(self) -> int:
        return self.voxels.shape[2]

    @property
    def width(self) -> int:
        return self.voxels.shape[3]

    def slice_series(self, slice_index: int) -> np.ndarray:
        """Time series of one slice, shape (T, H, W)."""
        return self.voxels[:, slice_index]

    def with_voxels(self, voxels: np.ndarray) -> "CtpVolume":
        return CtpVolume(
            patient_id=self.patient_id,
            voxels=voxels,
            spacing=self.spacing,
            thickness=self.thickness,
            frame_interval=self.frame_interval,
        )


@dataclass(frozen=True)
class LabelMap:
    """Ground-truth or predicted segmentation for one slice."""

    slice_index: int
    pixels: np.ndarray  # (H, W); uint8 4-valued for ground truth, float for raw predictions
    continuous: bool = False

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ValidationError(f"label map must be 2D, got shape {self.pixels.shape}")
        if not self.continuous:
            validate_labels(self.pixels)


def validate_labels(pixels: np.ndarray) -> None:
    """Raise unless every pixel is one of the four target values."""
    bad = ~np.isin(pixels, LABEL_VALUES)
    if bad.any():
        vals = np.unique(np.asarray(pixels)[bad])[:8]
        raise LabelEncodingError(f"label map contains invalid grayscale values {vals.tolist()}")


def check_labels_match(volume: CtpVolume, labels: np.ndarray) -> None:
    if labels.shape != (volume.height, volume.width):
        raise AlignmentError(
            f"label map shape {labels.shape} does not match slice "
            f"({volume.height}, {volume.width})"
        )


# ---------------------------------------------------------------------------
# CTPV v1: magic, u32 T,S,H,W, f32 frame_interval, f32 spacing, f32 thickness,
# then T*S*H*W f32 voxels in (t,s,y,x) order.  All little-endian.
# ---------------------------------------------------------------------------

def write_ctpv(volume: CtpVolume, path) -> None:
    header = CTPV_MAGIC + struct.pack(
        "<4I3f",
        volume.n_frames,
        volume.n_slices,
        volume.height,
        volume.width,
        volume.frame_interval,
        volume.spacing,
        volume.thickness,
    )
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(volume.voxels, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_ctpv(path, patient_id: str | None = None) -> CtpVolume:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 8 + 28 or blob[:8] != CTPV_MAGIC:
        raise FormatError(f"{path}: not a CTPV v1 file")
    t, s, h, w, interval, spacing, thickness = struct.unpack_from("<4I3f", blob, 8)
    expected = 8 + 28 + 4 * t * s * h * w
    if len(blob) != expected:
        raise FormatError(f"{path}: size {len(blob)} does not match header ({expected})")
    voxels = np.frombuffer(blob, dtype="<f4", offset=36).reshape(t, s, h, w).copy()
    if patient_id is None:
        import os

        patient_id = os.path.splitext(os.path.basename(path))[0]
    return CtpVolume(
        patient_id=patient_id,
        voxels=voxels,
        spacing=spacing,
        thickness=thickness,
        frame_interval=interval,
    )


# ---------------------------------------------------------------------------
# Binary PGM (P5), maxval 255.
# ---------------------------------------------------------------------------

def write_pgm(pixels: np.ndarray, path) -> None:
    if pixels.ndim != 2:
        raise ValidationError("PGM output requires a 2D array")
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise ValidationError("pixel values outside [0, 255]")
        arr = arr.astype(np.uint8)
    h, w = arr.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(arr.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_pgm(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    # Header: magic, width, height, maxval as whitespace-separated tokens
    # (comments not supported; we only read files we write).
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    data = blob[pos : pos + w * h]
    if len(data) != w * h:
        raise FormatError(f"{path}: truncated PGM pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()
