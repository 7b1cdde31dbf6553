"""Sliding-window tiling, tile labeling and core-tile augmentation.

All functions here are pure; tiling origins depend only on (H, W, stride).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import AlignmentError, ConfigError
from .volume import CtpVolume, SEVERITY_ORDER, TissueClass, check_labels_match, validate_labels

TILE = 16


def origin_grid(extent: int, stride: int, tile: int) -> list[int]:
    """Origins 0, stride, 2*stride, ... with the last one anchored at extent-tile."""
    last = extent - tile
    xs = list(range(0, last + 1, stride))
    if xs[-1] != last:
        xs.append(last)
    return xs


@dataclass(frozen=True)
class TileSample:
    """One (T x 16 x 16) input block plus its target patch and provenance."""

    input: np.ndarray  # (T, 16, 16) float32
    target: np.ndarray  # (16, 16) uint8, values in {0, 76, 150, 255}
    patient_id: str
    slice_index: int
    origin: tuple[int, int]  # top-left (y, x)
    tile_label: TissueClass | None = None
    augmented: bool = False
    transform: str | None = None


def tile_origins(height: int, width: int, stride: int, tile: int = TILE) -> list[tuple[int, int]]:
    """Row-major tile origins with the last row/column anchored to the border."""
    if not 1 <= stride <= tile:
        raise ConfigError(f"stride must be in 1..{tile}, got {stride}")
    if height < tile or width < tile:
        raise ConfigError(f"tile size {tile} exceeds slice ({height}, {width})")
    ys = origin_grid(height, stride, tile)
    xs = origin_grid(width, stride, tile)
    return [(y, x) for y in ys for x in xs]


def tile_slice(
    volume: CtpVolume,
    slice_index: int,
    labels: np.ndarray,
    stride: int,
) -> list[TileSample]:
    """Cut one slice's time series into (T,16,16) samples covering every pixel."""
    if not 0 <= slice_index < volume.n_slices:
        raise ConfigError(f"slice index {slice_index} out of range 0..{volume.n_slices - 1}")
    check_labels_match(volume, labels)
    validate_labels(labels)
    series = volume.slice_series(slice_index)
    samples = []
    for y, x in tile_origins(volume.height, volume.width, stride):
        samples.append(
            TileSample(
                input=np.ascontiguousarray(series[:, y : y + TILE, x : x + TILE]),
                target=np.ascontiguousarray(labels[y : y + TILE, x : x + TILE]),
                patient_id=volume.patient_id,
                slice_index=slice_index,
                origin=(y, x),
            )
        )
    return samples


def assign_tile_label(target: np.ndarray) -> TissueClass:
    """Majority pixel class; ties broken Core > Penumbra > Brain > Background."""
    validate_labels(target)
    counts = {cls: int(np.count_nonzero(target == cls.gray)) for cls in TissueClass}
    best = max(SEVERITY_ORDER, key=lambda cls: (counts[cls], -SEVERITY_ORDER.index(cls)))
    return best


def label_samples(samples: list[TileSample]) -> list[TileSample]:
    return [replace(s, tile_label=assign_tile_label(s.target)) for s in samples]


# Transform id -> function applied identically to every frame and the target.
AUGMENT_TRANSFORMS = {
    "rot90": lambda a: np.rot90(a, 1, axes=(-2, -1)),
    "rot180": lambda a: np.rot90(a, 2, axes=(-2, -1)),
    "rot270": lambda a: np.rot90(a, 3, axes=(-2, -1)),
    "mirror_h": lambda a: a[..., ::-1],
    "mirror_v": lambda a: np.flip(a, axis=-2),
}


def augment_core_tiles(
    samples: list[TileSample],
    seed: int = 0,
    transforms: tuple[str, ...] = ("rot90", "rot180", "rot270", "mirror_h", "mirror_v"),
) -> list[TileSample]:
    """Append rotated/mirrored copies of every Core-labeled sample.

    Non-core samples pass through unchanged.  The output order is
    deterministic: each core sample is followed by its transforms in the
    configured order.  `seed` is accepted for interface stability; the
    default transform set is exhaustive, not sampled.
    """
    del seed
    out = []
    for s in samples:
        label = s.tile_label if s.tile_label is not None else assign_tile_label(s.target)
        out.append(s)
        if label is not TissueClass.CORE:
            continue
        for name in transforms:
            fn = AUGMENT_TRANSFORMS[name]
            out.append(
                replace(
                    s,
                    input=np.ascontiguousarray(fn(s.input)),
                    target=np.ascontiguousarray(fn(s.target)),
                    tile_label=label,
                    augmented=True,
                    transform=name,
                )
            )
    return out


def compose_tiles(
    patches: list[np.ndarray],
    origins: list[tuple[int, int]],
    height: int,
    width: int,
    policy: str = "average",
) -> np.ndarray:
    """Stitch per-tile predictions back into a full slice.

    `average` takes the pixelwise mean over overlapping tiles; `last-wins`
    keeps the value from the last tile covering a pixel.
    """
    if len(patches) != len(origins):
        raise AlignmentError("patch/origin count mismatch")
    if policy == "average":
        acc = np.zeros((height, width), dtype=np.float64)
        cnt = np.zeros((height, width), dtype=np.int64)
        for patch, (y, x) in zip(patches, origins):
            acc[y : y + TILE, x : x + TILE] += patch
            cnt[y : y + TILE, x : x + TILE] += 1
        if (cnt == 0).any():
            raise AlignmentError("tile footprints do not cover the full slice")
        return (acc / cnt).astype(np.float64)
    if policy == "last-wins":
        out = np.full((height, width), np.nan)
        for patch, (y, x) in zip(patches, origins):
            out[y : y + TILE, x : x + TILE] = patch
        if np.isnan(out).any():
            raise AlignmentError("tile footprints do not cover the full slice")
        return out
    raise ConfigError(f"unknown overlap policy {policy!r}")
