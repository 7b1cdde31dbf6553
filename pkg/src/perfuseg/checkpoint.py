"""Binary checkpoint format (PSCK v1).

Layout, little-endian throughout:

    magic      8 bytes  b"PSCK0001"
    name_len   u32      length of the model-name UTF-8 string
    name       bytes
    n_params   u32
    per parameter:
        key_len u32, key bytes, ndim u32, dims u32 each, float32 data
    n_state    u32      optimizer state arrays (same record layout)
    per state array: as above

Parameters and state are written in sorted key order so files are
byte-stable for identical weights.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import CheckpointError, IncompleteFileError

MAGIC = b"PSCK0001"


def _write_array(out: list[bytes], key: str, arr: np.ndarray) -> None:
    kb = key.encode("utf-8")
    out.append(struct.pack("<I", len(kb)))
    out.append(kb)
    out.append(struct.pack("<I", arr.ndim))
    out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(
    path: str | Path,
    model_name: str,
    params: dict[str, Tensor],
    optimizer_state: dict[str, np.ndarray] | None = None,
) -> None:
    state = optimizer_state or {}
    out: list[bytes] = [MAGIC]
    nb = model_name.encode("utf-8")
    out.append(struct.pack("<I", len(nb)))
    out.append(nb)
    out.append(struct.pack("<I", len(params)))
    for key in sorted(params):
        _write_array(out, key, params[key].data)
    out.append(struct.pack("<I", len(state)))
    for key in sorted(state):
        _write_array(out, key, state[key])
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise IncompleteFileError(f"{self.path}: truncated checkpoint")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def array(self) -> tuple[str, np.ndarray]:
        key = self.take(self.u32()).decode("utf-8")
        ndim = self.u32()
        if ndim > 8:
            raise CheckpointError(f"{self.path}: implausible rank {ndim} for {key!r}")
        shape = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape)
        return key, data.astype(np.float32)


def load_checkpoint(path: str | Path):
    """Return (model_name, params dict of Tensors, optimizer state dict)."""
    blob = Path(path).read_bytes()
    r = _Reader(blob, str(path))
    if r.take(8) != MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a PSCK checkpoint")
    model_name = r.take(r.u32()).decode("utf-8")
    params: dict[str, Tensor] = {}
    for _ in range(r.u32()):
        key, data = r.array()
        params[key] = Tensor(data, requires_grad=True, name=key)
    state: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        key, data = r.array()
        state[key] = data
    if r.pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - r.pos} trailing bytes")
    return model_name, params, state
