"""Rigid registration, skull stripping and contrast enhancement."""

import numpy as np
import pytest

from perfuseg.errors import AlignmentError, SkullStripError
from perfuseg.phantom import PhantomSpec, generate_patient
from perfuseg.preprocess import (
    RigidTransform,
    brain_mask_slice,
    enhance_contrast,
    estimate_rigid,
    preprocess_volume,
    register_time_series,
    rigid_matrix,
    strip_skull,
    warp_rigid,
    _equalize,
)
from perfuseg.volume import CtpVolume

SPEC = PhantomSpec(n_patients=1, n_slices=1, noise_sigma=0.0)


@pytest.fixture(scope="module")
def still_patient():
    return generate_patient(SPEC, 0)


def _frame(patient):
    return patient.volume.voxels[0, 0].astype(np.float64)


# ---------------------------------------------------------------------------
# rigid geometry

def test_rigid_matrix_identity():
    m = rigid_matrix(0.0, 0.0, 0.0, (64, 64))
    assert np.allclose(m, np.eye(3))


def test_warp_rigid_pure_shift_moves_content():
    img = np.zeros((32, 32))
    img[10, 12] = 1.0
    out = warp_rigid(img, 0.0, dy=3.0, dx=-2.0)
    assert out[13, 10] == pytest.approx(1.0)


def test_warp_round_trip_is_near_identity():
    from scipy import ndimage

    rng = np.random.default_rng(0)
    img = ndimage.gaussian_filter(rng.random((64, 64)), 2.0)
    warped = warp_rigid(img, 4.0, 0.0, 0.0)
    back = warp_rigid(warped, -4.0, 0.0, 0.0)
    back = warp_rigid(warp_rigid(back, 0.0, 2.0, -3.0), 0.0, -2.0, 3.0)
    center = (slice(16, 48), slice(16, 48))
    assert np.abs(back[center] - img[center]).mean() < 0.1


# ---------------------------------------------------------------------------
# registration

def test_estimate_rigid_shape_mismatch():
    with pytest.raises(AlignmentError):
        estimate_rigid(np.zeros((8, 8)), np.zeros((8, 9)))


def test_estimate_rigid_identity_on_equal_frames(still_patient):
    f = _frame(still_patient)
    tr = estimate_rigid(f, f.copy())
    assert abs(tr.angle_deg) < 0.1
    assert abs(tr.dy) < 0.1 and abs(tr.dx) < 0.1


@pytest.mark.parametrize(
    "angle,dy,dx",
    [(0.0, 3.0, -2.0), (4.0, 0.0, 0.0), (-3.0, -2.5, 1.5), (6.0, 4.0, -4.0)],
)
def test_estimate_rigid_recovers_injected_motion(still_patient, angle, dy, dx):
    f = _frame(still_patient)
    moved = warp_rigid(f, angle, dy, dx, fill=float(f.min()))
    tr = estimate_rigid(f, moved)
    # the correction composed with the injected motion must be ~identity
    m_inj = rigid_matrix(angle, dy, dx, f.shape)
    m_cor = rigid_matrix(tr.angle_deg, tr.dy, tr.dx, f.shape)
    total = m_cor @ m_inj
    residual_angle = np.degrees(np.arctan2(total[1, 0], total[0, 0]))
    center = np.array([(f.shape[0] - 1) / 2, (f.shape[1] - 1) / 2, 1.0])
    residual_shift = (total @ center)[:2] - center[:2]
    assert abs(residual_angle) < 0.5
    assert np.hypot(*residual_shift) < 0.5


def test_register_time_series_identity_for_first_frame(still_patient):
    frames = still_patient.volume.voxels[:4, 0]
    aligned, transforms = register_time_series(frames)
    assert transforms[0] == RigidTransform(0.0, 0.0, 0.0)
    assert np.array_equal(aligned[0], frames[0])
    assert aligned.shape == frames.shape


# ---------------------------------------------------------------------------
# skull stripping

def test_brain_mask_matches_phantom_interior(still_patient):
    mean_img = still_patient.volume.voxels[:, 0].mean(axis=0)
    mask = brain_mask_slice(mean_img)
    truth = still_patient.brain_masks[0]
    disagree = np.mean(mask != truth)
    assert disagree < 0.02


def test_strip_skull_idempotent(still_patient):
    stripped, masks = strip_skull(still_patient.volume)
    again, masks2 = strip_skull(stripped)
    assert np.mean(masks != masks2) < 0.02
    assert np.all(stripped.voxels[:, 0][:, ~masks[0]] == 0.0)


def test_strip_skull_constant_slice_raises():
    vol = CtpVolume(patient_id="p", voxels=np.zeros((2, 1, 32, 32), dtype=np.float32))
    with pytest.raises(SkullStripError, match="slice 0"):
        strip_skull(vol)


# ---------------------------------------------------------------------------
# contrast enhancement

def test_equalize_matches_cdf_oracle_on_integers():
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, (40, 40)).astype(np.float64)
    mask = np.ones((40, 40), dtype=bool)
    mask[:5] = False
    out = _equalize(img / 255.0, mask)
    # oracle: value -> cdf(value), min-shifted and normalized
    vals = (img[mask]).astype(np.int64)
    hist = np.bincount(vals, minlength=256).astype(np.float64)
    cdf = np.cumsum(hist)
    want = (cdf[vals] - cdf[vals].min()) / (cdf[-1] - cdf[vals].min())
    assert np.array_equal(out[mask], want)
    assert np.all(out[~mask] == 0.0)


def test_equalize_is_monotone():
    rng = np.random.default_rng(6)
    img = rng.random((32, 32))
    mask = np.ones((32, 32), dtype=bool)
    out = _equalize(img, mask)
    order = np.argsort(img.ravel())
    assert np.all(np.diff(out.ravel()[order]) >= 0)


def test_enhance_contrast_bounds_and_mask(still_patient):
    stripped, masks = strip_skull(still_patient.volume)
    enhanced = enhance_contrast(stripped, masks)
    v = enhanced.voxels
    assert v.min() >= 0.0 and v.max() <= 1.0
    assert np.all(v[:, 0][:, ~masks[0]] == 0.0)


def test_preprocess_volume_full_chain(still_patient):
    out, masks, transforms = preprocess_volume(still_patient.volume, register=False)
    assert transforms is None
    assert out.voxels.shape == still_patient.volume.voxels.shape
    assert out.voxels.min() >= 0.0 and out.voxels.max() <= 1.0
    assert masks.shape == (1, SPEC.size, SPEC.size)
