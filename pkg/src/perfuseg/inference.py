"""Slice prediction and composition.

Two prediction paths share the tiling machinery: the segmenter path runs
the network per tile, scales its [0,1] output by 255, and composes the
continuous slice map (overlaps averaged); the classifier path expands
each tile's winning class target value across the whole 16x16 tile.
Continuous maps are then binned into the four class bands.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor
from .errors import CheckpointError, ValidationError
from .models import ModelSpec, forward
from .tiles import TILE, tile_origins
from .training import CLASS_ORDER
from .volume import TissueClass, write_pgm

# class bands over the continuous [0,255] map: [low, high) -> class value
DEFAULT_BANDS = (
    (0.0, 60.0, TissueClass.BRAIN),
    (60.0, 135.0, TissueClass.PENUMBRA),
    (135.0, 234.0, TissueClass.CORE),
)


def _round_half_away(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def predict_slice(spec: ModelSpec, params: dict, voxels: np.ndarray,
                  stride: int = TILE, batch_size: int = 64) -> np.ndarray:
    """Continuous [0,255] prediction map for one slice's (T, H, W) stack.

    Overlapping tile predictions are averaged pixelwise.
    """
    t, h, w = voxels.shape
    if spec.input_shape[0] != t:
        raise CheckpointError(
            f"model expects {spec.input_shape[0]} frames, volume has {t}"
        )
    origins = tile_origins(h, w, stride)
    batches = []
    for lo in range(0, len(origins), batch_size):
        chunk = origins[lo : lo + batch_size]
        x = np.stack(
            [voxels[:, oy : oy + TILE, ox : ox + TILE] for oy, ox in chunk]
        ).astype(np.float32)[..., None]
        batches.append(forward(spec, params, Tensor(x)).data)
    preds = np.concatenate(batches, axis=0)

    acc = np.zeros((h, w), dtype=np.float64)
    cover = np.zeros((h, w), dtype=np.int64)
    for (oy, ox), pred in zip(origins, preds):
        if spec.is_classifier:
            winner = CLASS_ORDER[int(np.argmax(pred))]
            tile_map = np.full((TILE, TILE), float(winner.value))
        else:
            tile_map = pred.astype(np.float64) * 255.0
        acc[oy : oy + TILE, ox : ox + TILE] += tile_map
        cover[oy : oy + TILE, ox : ox + TILE] += 1
    if (cover == 0).any():
        raise ValidationError("tiling left uncovered pixels")
    return (acc / cover).astype(np.float32)


def classify_pixels(continuous: np.ndarray, bands=DEFAULT_BANDS) -> np.ndarray:
    """Bin a continuous [0,255] map into the four class target values."""
    values = np.asarray(continuous, dtype=np.float64)
    if values.min() < 0.0 or values.max() > 255.0:
        raise ValidationError(
            f"map values outside [0,255]: [{values.min()}, {values.max()}]"
        )
    out = np.full(values.shape, TissueClass.BACKGROUND.value, dtype=np.uint8)
    for low, high, cls in bands:
        out[(values >= low) & (values < high)] = cls.value
    return out


def apply_mask(labels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Force out-of-mask pixels to background."""
    out = labels.copy()
    out[~mask] = TissueClass.BACKGROUND.value
    return out


def render_output(labels: np.ndarray, path, truth: np.ndarray | None = None) -> None:
    """Write a 4-valued label map as PGM; optionally a side-by-side panel
    with the ground truth."""
    allowed = {cls.value for cls in TissueClass}
    if not set(np.unique(labels)).issubset(allowed):
        raise ValidationError("label map contains non-class values")
    image = labels
    if truth is not None:
        divider = np.full((labels.shape[0], 2), 128, dtype=np.uint8)
        image = np.concatenate([labels, divider, truth], axis=1)
    write_pgm(image.astype(np.uint8), path)


def quantize_map(continuous: np.ndarray) -> np.ndarray:
    """Round a continuous map to uint8 with half-away-from-zero rounding."""
    return np.clip(_round_half_away(np.asarray(continuous, dtype=np.float64)),
                   0, 255).astype(np.uint8)
