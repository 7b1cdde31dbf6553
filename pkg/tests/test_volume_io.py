"""Volume data model and CTPV/PGM file formats."""

import numpy as np
import pytest

from perfuseg.errors import (
    AlignmentError,
    FormatError,
    LabelEncodingError,
    ValidationError,
)
from perfuseg.volume import (
    CtpVolume,
    LabelMap,
    TissueClass,
    check_labels_match,
    read_ctpv,
    read_pgm,
    validate_labels,
    write_ctpv,
    write_pgm,
)


def _volume(t=3, s=2, h=8, w=8, pid="p1"):
    rng = np.random.default_rng(0)
    vox = rng.random((t, s, h, w)).astype(np.float32)
    return CtpVolume(patient_id=pid, voxels=vox, frame_interval=1.0)


def test_tissue_gray_values():
    assert TissueClass.BRAIN.gray == 0
    assert TissueClass.PENUMBRA.gray == 76
    assert TissueClass.CORE.gray == 150
    assert TissueClass.BACKGROUND.gray == 255


def test_volume_properties_and_slice_series():
    v = _volume()
    assert (v.n_frames, v.n_slices, v.height, v.width) == (3, 2, 8, 8)
    assert np.array_equal(v.slice_series(1), v.voxels[:, 1])


def test_volume_rejects_wrong_rank():
    with pytest.raises(ValidationError):
        CtpVolume(patient_id="p", voxels=np.zeros((3, 8, 8), dtype=np.float32))


def test_ctpv_round_trip_is_bit_exact(tmp_path):
    v = _volume()
    path = tmp_path / "p1.ctpv"
    write_ctpv(v, path)
    back = read_ctpv(path)
    assert back.patient_id == "p1"
    assert back.voxels.tobytes() == v.voxels.tobytes()
    assert back.frame_interval == v.frame_interval


def test_ctpv_deterministic_bytes(tmp_path):
    v = _volume()
    a, b = tmp_path / "a.ctpv", tmp_path / "b.ctpv"
    write_ctpv(v, a)
    write_ctpv(v, b)
    assert a.read_bytes() == b.read_bytes()


def test_ctpv_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.ctpv"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(FormatError):
        read_ctpv(path)
    v = _volume()
    good = tmp_path / "good.ctpv"
    write_ctpv(v, good)
    good.write_bytes(good.read_bytes()[:-10])
    with pytest.raises(FormatError):
        read_ctpv(good)


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (12, 17), dtype=np.uint8)
    path = tmp_path / "img.pgm"
    write_pgm(img, path)
    assert np.array_equal(read_pgm(path), img)


def test_pgm_rejects_out_of_range(tmp_path):
    with pytest.raises(ValidationError):
        write_pgm(np.array([[300.0]]), tmp_path / "x.pgm")
    with pytest.raises(ValidationError):
        write_pgm(np.zeros((2, 2, 2)), tmp_path / "x.pgm")


def test_pgm_truncated_header(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n4")
    with pytest.raises(FormatError):
        read_pgm(path)


def test_validate_labels():
    validate_labels(np.array([[0, 76], [150, 255]], dtype=np.uint8))
    with pytest.raises(LabelEncodingError):
        validate_labels(np.array([[0, 77]], dtype=np.uint8))


def test_label_map_continuous_skips_validation():
    LabelMap(slice_index=0, pixels=np.full((4, 4), 0.5), continuous=True)
    with pytest.raises(LabelEncodingError):
        LabelMap(slice_index=0, pixels=np.full((4, 4), 3, dtype=np.uint8))


def test_check_labels_match():
    v = _volume()
    check_labels_match(v, np.zeros((8, 8), dtype=np.uint8))
    with pytest.raises(AlignmentError):
        check_labels_match(v, np.zeros((8, 9), dtype=np.uint8))
