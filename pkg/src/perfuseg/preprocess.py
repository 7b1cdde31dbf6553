"""Preprocessing: rigid motion correction, skull stripping, contrast
enhancement.

Registration aligns every time frame of a slice to frame 0 with a rigid
(rotation + translation) transform, searched coarse-to-fine: for each
candidate rotation the best translation is found in closed form via
FFT cross-correlation, then the rotation grid is refined around the
winner down to 0.125 degrees with a final subpixel parabola fit on the
correlation peak.

Skull stripping finds the bone ring on the temporal-mean image, floods
the interior with a watershed on the gradient magnitude, and falls back
to an Otsu threshold + largest connected component when no closed ring
exists (which also makes the operation idempotent on already-stripped
volumes).

Contrast enhancement is a three-step chain applied inside the brain
mask: percentile stretch, histogram equalization, then global
normalization of the whole volume to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu
from skimage.segmentation import watershed

from .errors import AlignmentError, SkullStripError
from .volume import CtpVolume


# ---------------------------------------------------------------------------
# rigid warping (shared by the phantom's jitter injection and by recovery)

def rigid_matrix(angle_deg: float, dy: float, dx: float, shape) -> np.ndarray:
    """3x3 homogeneous matrix rotating about the image center then shifting."""
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    to_center = np.array([[1, 0, -cy], [0, 1, -cx], [0, 0, 1]], dtype=float)
    back = np.array([[1, 0, cy + dy], [0, 1, cx + dx], [0, 0, 1]], dtype=float)
    return back @ rot @ to_center


def warp_rigid(image: np.ndarray, angle_deg: float, dy: float, dx: float,
               fill: float | None = None) -> np.ndarray:
    """Bilinear rigid warp of a 2D image (rotate about center, then shift)."""
    if fill is None:
        fill = float(image.min())
    mat = rigid_matrix(angle_deg, dy, dx, image.shape)
    inv = np.linalg.inv(mat)
    out = ndimage.affine_transform(
        image.astype(np.float64),
        inv[:2, :2],
        offset=inv[:2, 2],
        order=1,
        mode="constant",
        cval=fill,
    )
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# registration

@dataclass(frozen=True)
class RigidTransform:
    angle_deg: float
    dy: float
    dx: float


def _grad_mag(image: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(ndimage.gaussian_filter(image, 1.0))
    # log compression keeps any single high-contrast edge from dominating
    # the correlation
    return np.log1p(np.hypot(gy, gx))


def _hann2d(shape) -> np.ndarray:
    wy = np.hanning(shape[0])
    wx = np.hanning(shape[1])
    return np.outer(wy, wx)


def _best_shift(ref_f: np.ndarray, moving: np.ndarray, window: np.ndarray,
                max_shift: float):
    """Best integer translation + correlation score via FFT cross-correlation,
    with a parabolic subpixel refinement around the peak."""
    h, w = moving.shape
    mov = (moving - moving.mean()) * window
    norm = np.linalg.norm(mov)
    if norm == 0:
        return 0.0, 0.0, -np.inf
    corr = np.fft.ifft2(ref_f * np.conj(np.fft.fft2(mov))).real / norm
    corr = np.fft.fftshift(corr)
    cy, cx = h // 2, w // 2
    r = int(np.ceil(max_shift))
    region = corr[max(cy - r, 0) : cy + r + 1, max(cx - r, 0) : cx + r + 1]
    iy, ix = np.unravel_index(np.argmax(region), region.shape)
    py, px = iy + max(cy - r, 0), ix + max(cx - r, 0)
    score = corr[py, px]

    def refine(p, axis_slice):
        lo, mid, hi = axis_slice
        denom = lo - 2 * mid + hi
        if denom >= -1e-12:  # flat or non-concave: keep integer peak
            return 0.0
        return float(np.clip(0.5 * (lo - hi) / denom, -0.5, 0.5))

    dy_frac = dx_frac = 0.0
    if 0 < py < h - 1:
        dy_frac = refine(py, (corr[py - 1, px], corr[py, px], corr[py + 1, px]))
    if 0 < px < w - 1:
        dx_frac = refine(px, (corr[py, px - 1], corr[py, px], corr[py, px + 1]))
    # a peak at (py, px) means the moving image is displaced by (py-cy, px-cx)
    return (py - cy) + dy_frac, (px - cx) + dx_frac, float(score)


def _polar_profile(image: np.ndarray, n_theta: int, radii: np.ndarray) -> np.ndarray:
    """Sample an image on a polar grid about its center and remove the
    per-radius mean, so circularly symmetric content (skull ring, vignette)
    contributes nothing to the angular correlation."""
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    yy = cy + radii[:, None] * np.sin(theta)[None, :]
    xx = cx + radii[:, None] * np.cos(theta)[None, :]
    polar = ndimage.map_coordinates(image, [yy, xx], order=1, mode="nearest")
    polar -= polar.mean(axis=1, keepdims=True)
    # unit-normalize each radius row (relative to the typical row) so a few
    # high-contrast radii cannot dominate the angular correlation
    norms = np.linalg.norm(polar, axis=1, keepdims=True)
    floor = np.median(norms)
    if floor > 0:
        polar /= np.maximum(norms, floor)
    return polar


def _estimate_rotation(ref: np.ndarray, mov: np.ndarray, max_angle: float) -> float:
    """Rotation of `mov` relative to `ref` via circular correlation of
    polar profiles (positive = mov is rotated counter-clockwise in (y, x))."""
    h, w = ref.shape
    n_theta = 1024
    rmax = min(h, w) / 2.0 - 2.0
    radii = np.arange(3.0, rmax, 1.0)
    pr = _polar_profile(ref, n_theta, radii)
    pm = _polar_profile(mov, n_theta, radii)
    corr = np.fft.ifft(
        (np.fft.fft(pr, axis=1) * np.conj(np.fft.fft(pm, axis=1))).sum(axis=0)
    ).real
    step_deg = 360.0 / n_theta
    max_bins = int(np.ceil(max_angle / step_deg))
    idx = np.concatenate([np.arange(0, max_bins + 1), np.arange(n_theta - max_bins, n_theta)])
    peak = idx[int(np.argmax(corr[idx]))]
    lo, mid, hi = corr[(peak - 1) % n_theta], corr[peak], corr[(peak + 1) % n_theta]
    denom = lo - 2 * mid + hi
    frac = 0.0 if denom >= -1e-12 else float(np.clip(0.5 * (lo - hi) / denom, -0.5, 0.5))
    bins = peak if peak <= n_theta // 2 else peak - n_theta
    angle = (bins + frac) * step_deg
    # correlation peak at +k bins means P_mov(theta) ~ P_ref(theta + k):
    # mov content sits k bins clockwise; in image terms (y down) this is a
    # rotation of mov by -angle relative to ref with warp_rigid's convention
    return float(np.clip(angle, -max_angle, max_angle))


def estimate_rigid(reference: np.ndarray, moving: np.ndarray,
                   max_shift: float = 8.0, max_angle: float = 8.0,
                   iterations: int = 3) -> RigidTransform:
    """Estimate the rigid correction mapping `moving` onto `reference`.

    Alternates a polar-correlation rotation estimate with an FFT
    cross-correlation translation estimate; both are subpixel-refined.
    """
    ref = reference.astype(np.float64)
    mov = moving.astype(np.float64)
    if ref.shape != mov.shape:
        raise AlignmentError(f"frame shapes differ: {ref.shape} vs {mov.shape}")
    window = _hann2d(ref.shape)
    # translation is estimated on gradient magnitudes: edges (skull ring,
    # ventricles, static markers) persist across the contrast passage while
    # absolute intensities do not
    ref_g = _grad_mag(ref)
    ref_f = np.fft.fft2((ref_g - ref_g.mean()) * window)
    fill = float(mov.min())

    # translation first: the gradient correlation barely cares about small
    # rotations, and the polar rotation estimate needs a centered frame
    angle = 0.0
    sy, sx, _ = _best_shift(ref_f, _grad_mag(mov), window, max_shift)
    dy = float(np.clip(sy, -max_shift, max_shift))
    dx = float(np.clip(sx, -max_shift, max_shift))
    for _ in range(iterations):
        # compensate the current translation estimate, then read off the
        # total remaining rotation of the moving frame
        unshifted = warp_rigid(mov, 0.0, dy, dx, fill=fill) if (dy or dx) else mov
        rot = _estimate_rotation(ref, unshifted.astype(np.float64), max_angle)
        angle = float(np.clip(-rot, -max_angle, max_angle))
        rotated = warp_rigid(mov, angle, 0.0, 0.0, fill=fill)
        sy, sx, _ = _best_shift(ref_f, _grad_mag(rotated.astype(np.float64)), window, max_shift)
        dy = float(np.clip(sy, -max_shift, max_shift))
        dx = float(np.clip(sx, -max_shift, max_shift))
    return RigidTransform(angle_deg=angle, dy=dy, dx=dx)


def register_time_series(frames: np.ndarray, max_shift: float = 8.0,
                         max_angle: float = 8.0):
    """Align frames (T, H, W) to frame 0.

    Returns (aligned frames float32, list of RigidTransform per frame).
    Frame 0 is the reference and gets the identity transform.
    """
    t = frames.shape[0]
    aligned = np.empty_like(frames, dtype=np.float32)
    aligned[0] = frames[0]
    transforms = [RigidTransform(0.0, 0.0, 0.0)]
    reference = frames[0]
    for i in range(1, t):
        tr = estimate_rigid(reference, frames[i], max_shift, max_angle)
        aligned[i] = warp_rigid(frames[i], tr.angle_deg, tr.dy, tr.dx)
        transforms.append(tr)
    return aligned, transforms


def register_volume(volume: CtpVolume, max_shift: float = 8.0,
                    max_angle: float = 8.0):
    """Register every slice of a (T, S, H, W) volume independently."""
    vox = volume.voxels
    out = np.empty_like(vox)
    all_transforms = []
    for s in range(vox.shape[1]):
        aligned, transforms = register_time_series(vox[:, s], max_shift, max_angle)
        out[:, s] = aligned
        all_transforms.append(transforms)
    return (
        CtpVolume(
            patient_id=volume.patient_id,
            voxels=out,
            spacing=volume.spacing,
            thickness=volume.thickness,
            frame_interval=volume.frame_interval,
        ),
        all_transforms,
    )


# ---------------------------------------------------------------------------
# skull stripping

def brain_mask_slice(mean_image: np.ndarray, bone_fraction: float = 0.5) -> np.ndarray:
    """Binary brain mask for one slice's temporal-mean image.

    Bone is thresholded `bone_fraction` of the way from the median up to the
    99.9th percentile; if that yields a closed ring, a watershed seeded
    inside and outside the ring floods the brain, otherwise (e.g. on an
    already-stripped image) an Otsu threshold + largest component is used.
    """
    img = mean_image.astype(np.float64)
    if not np.any(img > 0) or img.max() == img.min():
        raise SkullStripError("slice is constant; no brain content to mask")

    p50, p999 = np.percentile(img, (50.0, 99.9))
    bone_thresh = p50 + bone_fraction * (p999 - p50)
    bone = img >= bone_thresh
    interior = ndimage.binary_fill_holes(bone) & ~bone
    interior = ndimage.binary_erosion(interior, iterations=2)

    if interior.sum() >= 16:
        # flood the inside of the skull ring along the intensity gradient
        gy, gx = np.gradient(img)
        grad = np.hypot(gy, gx)
        markers = np.zeros(img.shape, dtype=np.int32)
        markers[interior] = 2
        border = np.zeros_like(markers, dtype=bool)
        border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
        markers[border & ~bone] = 1
        labels = watershed(grad, markers, mask=~bone)
        mask = labels == 2
    else:
        # no closed ring (e.g. already stripped): threshold + largest blob
        thresh = threshold_otsu(img)
        fg = img > thresh
        labeled, n = ndimage.label(fg)
        if n == 0:
            raise SkullStripError("no foreground found while masking")
        sizes = ndimage.sum(fg, labeled, index=np.arange(1, n + 1))
        mask = labeled == (1 + int(np.argmax(sizes)))

    mask = ndimage.binary_fill_holes(mask)
    labeled, n = ndimage.label(mask)  # 4-connectivity: one component kept
    if n == 0:
        raise SkullStripError("empty brain mask")
    sizes = ndimage.sum(mask, labeled, index=np.arange(1, n + 1))
    return labeled == (1 + int(np.argmax(sizes)))


def strip_skull(volume: CtpVolume):
    """Mask out skull/background on every slice.

    Returns (stripped volume with out-of-mask voxels set to 0,
    masks (S, H, W) bool).
    """
    vox = volume.voxels
    t, s, h, w = vox.shape
    masks = np.zeros((s, h, w), dtype=bool)
    out = vox.copy()
    for si in range(s):
        try:
            mask = brain_mask_slice(vox[:, si].mean(axis=0))
        except SkullStripError as exc:
            raise SkullStripError(f"slice {si}: {exc}") from None
        masks[si] = mask
        out[:, si][:, ~mask] = 0.0
    return (
        CtpVolume(
            patient_id=volume.patient_id,
            voxels=out,
            spacing=volume.spacing,
            thickness=volume.thickness,
            frame_interval=volume.frame_interval,
        ),
        masks,
    )


# ---------------------------------------------------------------------------
# contrast enhancement

def _stretch(frame: np.ndarray, mask: np.ndarray) -> np.ndarray:
    vals = frame[mask]
    lo, hi = np.percentile(vals, (1.0, 99.0))
    out = np.zeros_like(frame, dtype=np.float64)
    if hi > lo:
        out[mask] = np.clip((frame[mask] - lo) / (hi - lo), 0.0, 1.0)
    return out


def _equalize(frame: np.ndarray, mask: np.ndarray, levels: int = 256) -> np.ndarray:
    vals = frame[mask]
    out = np.zeros_like(frame, dtype=np.float64)
    if vals.max() == vals.min():
        out[mask] = vals  # constant region: equalization is the identity
        return out
    bins = np.minimum((vals * (levels - 1)).astype(np.int64), levels - 1)
    hist = np.bincount(bins, minlength=levels).astype(np.float64)
    cdf = np.cumsum(hist)
    cdf = (cdf - cdf[0]) / (cdf[-1] - cdf[0])
    out[mask] = cdf[bins]
    return out


def enhance_contrast(volume: CtpVolume, masks: np.ndarray) -> CtpVolume:
    """Per-frame stretch + equalization inside the mask, then global [0,1]
    normalization of the whole volume."""
    vox = volume.voxels.astype(np.float64)
    t, s, h, w = vox.shape
    out = np.zeros_like(vox)
    for si in range(s):
        mask = masks[si]
        if not mask.any():
            continue
        for ti in range(t):
            stretched = _stretch(vox[ti, si], mask)
            out[ti, si] = _equalize(stretched, mask)
    vmax, vmin = out.max(), out.min()
    if vmax > vmin:
        out = (out - vmin) / (vmax - vmin)
    return CtpVolume(
        patient_id=volume.patient_id,
        voxels=out.astype(np.float32),
        spacing=volume.spacing,
        thickness=volume.thickness,
        frame_interval=volume.frame_interval,
    )


def preprocess_volume(volume: CtpVolume, register: bool = True):
    """Full chain: registration -> skull strip -> contrast enhancement.

    Returns (processed volume, masks, per-slice transforms or None).
    """
    transforms = None
    if register:
        volume, transforms = register_volume(volume)
    volume, masks = strip_skull(volume)
    volume = enhance_contrast(volume, masks)
    return volume, masks, transforms
