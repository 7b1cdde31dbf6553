"""PSCK v1 checkpoint serialization."""

import numpy as np
import pytest

from perfuseg.checkpoint import load_checkpoint, save_checkpoint
from perfuseg.errors import CheckpointError, IncompleteFileError


def _params():
    rng = np.random.default_rng(0)
    return {
        "enc1/kernel": rng.random((3, 3, 3, 1, 16)).astype(np.float32),
        "enc1/bias": np.zeros(16, dtype=np.float32),
        "fc/weight": rng.random((8, 4)).astype(np.float32),
    }


def test_round_trip(tmp_path):
    path = tmp_path / "m.psck"
    params = _params()
    state = {"velocity/enc1/kernel": np.ones((3, 3, 3, 1, 16), dtype=np.float32)}
    save_checkpoint(path, "mjnet", params, state)
    name, loaded, loaded_state = load_checkpoint(path)
    assert name == "mjnet"
    assert sorted(loaded) == sorted(params)
    for k, v in params.items():
        assert loaded[k].data.dtype == np.float32
        assert np.array_equal(loaded[k].data, v)
        assert loaded[k].requires_grad
    assert np.array_equal(loaded_state["velocity/enc1/kernel"], state["velocity/enc1/kernel"])


def test_write_is_deterministic(tmp_path):
    a, b = tmp_path / "a.psck", tmp_path / "b.psck"
    # insertion order must not matter: keys are sorted on write
    params = _params()
    reordered = dict(sorted(params.items(), reverse=True))
    save_checkpoint(a, "mjnet", params, {})
    save_checkpoint(b, "mjnet", reordered, {})
    assert a.read_bytes() == b.read_bytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "x.psck"
    path.write_bytes(b"NOTPSCK1" + b"\x00" * 32)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_truncated_file(tmp_path):
    path = tmp_path / "m.psck"
    save_checkpoint(path, "mjnet", _params(), {})
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 11])
    with pytest.raises(IncompleteFileError):
        load_checkpoint(path)


def test_trailing_garbage(tmp_path):
    path = tmp_path / "m.psck"
    save_checkpoint(path, "mjnet", _params(), {})
    path.write_bytes(path.read_bytes() + b"\x00\x01\x02")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_empty_params_round_trip(tmp_path):
    path = tmp_path / "empty.psck"
    save_checkpoint(path, "arch1", {}, {})
    name, params, state = load_checkpoint(path)
    assert name == "arch1" and params == {} and state == {}
