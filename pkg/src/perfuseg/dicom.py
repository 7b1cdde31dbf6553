"""Minimal DICOM support: Explicit VR Little Endian only.

Enough of the standard to round-trip the synthetic golden corpus: parse
per-frame files, regroup them into a 4D volume, and serialize fixture
files for the tests.  Compressed pixel data and implicit VR are out of
scope by design.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicateFrameError,
    FormatError,
    IncompleteFileError,
    InconsistentAcquisitionError,
    UnsupportedTransferSyntaxError,
    ValidationError,
)
from .volume import CtpVolume, DEFAULT_FRAME_INTERVAL_S

EXPLICIT_VR_LE = "1.2.840.10008.1.2.1"

# Tags we read/write: (group, element)
TAG_TRANSFER_SYNTAX = (0x0002, 0x0010)
TAG_PATIENT_ID = (0x0010, 0x0020)
TAG_SERIES_UID = (0x0020, 0x000E)
TAG_SLICE_LOCATION = (0x0020, 0x1041)
TAG_ACQ_TIME = (0x0008, 0x0032)
TAG_ROWS = (0x0028, 0x0010)
TAG_COLS = (0x0028, 0x0011)
TAG_INTERCEPT = (0x0028, 0x1052)
TAG_SLOPE = (0x0028, 0x1053)
TAG_PIXEL_DATA = (0x7FE0, 0x0010)

LONG_VRS = {b"OB", b"OW", b"OF", b"SQ", b"UT", b"UN"}


@dataclass
class DicomFrame:
    """One 2D frame with the attributes the pipeline needs."""

    rows: int
    columns: int
    stored: np.ndarray  # (rows, columns) uint16 stored values
    slope: float = 1.0
    intercept: float = 0.0
    slice_location: float = 0.0
    acquisition_time: float = 0.0  # seconds since midnight
    patient_id: str = ""
    series_uid: str = ""

    def __post_init__(self):
        if self.stored.size != self.rows * self.columns:
            raise ValidationError(
                f"pixel count {self.stored.size} != rows*columns {self.rows * self.columns}"
            )
        if self.slope == 0:
            raise ValidationError("rescale slope must be nonzero")
        self.stored = np.asarray(self.stored, dtype=np.uint16).reshape(self.rows, self.columns)

    @property
    def calibrated(self) -> np.ndarray:
        """Stored values converted to calibrated units via slope/intercept."""
        return self.stored.astype(np.float32) * np.float32(self.slope) + np.float32(self.intercept)


def _parse_elements(blob: bytes, start: int):
    """Yield (tag, vr, value_bytes) for explicit VR little endian elements."""
    pos = start
    n = len(blob)
    while pos < n:
        if pos + 8 > n:
            raise IncompleteFileError("file truncated inside an element header")
        group, elem = struct.unpack_from("<HH", blob, pos)
        vr = blob[pos + 4 : pos + 6]
        if not (vr.isalpha() and vr.isupper()):
            raise FormatError(f"invalid VR {vr!r} at offset {pos} (implicit VR is unsupported)")
        if vr in LONG_VRS:
            if pos + 12 > n:
                raise IncompleteFileError("file truncated inside a long element header")
            (length,) = struct.unpack_from("<I", blob, pos + 8)
            body = pos + 12
        else:
            (length,) = struct.unpack_from("<H", blob, pos + 6)
            body = pos + 8
        if body + length > n:
            raise IncompleteFileError(
                f"file truncated inside element ({group:04X},{elem:04X})"
            )
        yield (group, elem), vr, blob[body : body + length]
        pos = body + length


def _decode_time(text: str) -> float:
    """DICOM TM 'HHMMSS.frac' -> seconds since midnight."""
    text = text.strip()
    if not text:
        return 0.0
    hh = int(text[0:2]) if len(text) >= 2 else 0
    mm = int(text[2:4]) if len(text) >= 4 else 0
    ss = float(text[4:]) if len(text) > 4 else 0.0
    return hh * 3600 + mm * 60 + ss


def _encode_time(seconds: float) -> str:
    hh = int(seconds // 3600)
    mm = int((seconds % 3600) // 60)
    ss = seconds % 60
    return f"{hh:02d}{mm:02d}{ss:09.6f}"


def parse_dicom(blob: bytes) -> DicomFrame:
    """Parse one Explicit VR Little Endian file into a DicomFrame."""
    if len(blob) < 132:
        raise FormatError("file too short for the DICOM preamble")
    if blob[128:132] != b"DICM":
        raise FormatError("missing DICM marker after the 128-byte preamble")

    fields: dict = {}
    pixel_data = None
    for tag, vr, body in _parse_elements(blob, 132):
        if tag == TAG_TRANSFER_SYNTAX:
            syntax = body.decode("ascii").rstrip("\x00 ")
            if syntax != EXPLICIT_VR_LE:
                raise UnsupportedTransferSyntaxError(
                    f"transfer syntax {syntax} is unsupported; only Explicit VR "
                    "Little Endian is implemented"
                )
        elif tag == TAG_PIXEL_DATA:
            pixel_data = np.frombuffer(body, dtype="<u2")
        elif tag in (TAG_ROWS, TAG_COLS):
            fields[tag] = struct.unpack("<H", body)[0]
        elif tag in (TAG_SLOPE, TAG_INTERCEPT, TAG_SLICE_LOCATION):
            fields[tag] = float(body.decode("ascii").strip() or 0)
        elif tag == TAG_ACQ_TIME:
            fields[tag] = _decode_time(body.decode("ascii"))
        elif tag in (TAG_PATIENT_ID, TAG_SERIES_UID):
            fields[tag] = body.decode("ascii").rstrip("\x00 ")

    if TAG_ROWS not in fields or TAG_COLS not in fields:
        raise FormatError("missing Rows/Columns")
    if pixel_data is None:
        raise IncompleteFileError("missing PixelData element")
    return DicomFrame(
        rows=fields[TAG_ROWS],
        columns=fields[TAG_COLS],
        stored=pixel_data,
        slope=fields.get(TAG_SLOPE, 1.0),
        intercept=fields.get(TAG_INTERCEPT, 0.0),
        slice_location=fields.get(TAG_SLICE_LOCATION, 0.0),
        acquisition_time=fields.get(TAG_ACQ_TIME, 0.0),
        patient_id=fields.get(TAG_PATIENT_ID, ""),
        series_uid=fields.get(TAG_SERIES_UID, ""),
    )


def parse_dicom_file(path) -> DicomFrame:
    with open(path, "rb") as fh:
        return parse_dicom(fh.read())


def _element(group: int, elem: int, vr: bytes, body: bytes) -> bytes:
    if len(body) % 2:
        body += b"\x00" if vr in (b"UI", b"OB") else b" "
    head = struct.pack("<HH", group, elem) + vr
    if vr in LONG_VRS:
        return head + b"\x00\x00" + struct.pack("<I", len(body)) + body
    return head + struct.pack("<H", len(body)) + body


def serialize_dicom(frame: DicomFrame) -> bytes:
    """Write a frame as Explicit VR Little Endian (golden-fixture generator)."""
    meta = _element(0x0002, 0x0010, b"UI", EXPLICIT_VR_LE.encode("ascii"))
    ds = b"".join(
        [
            _element(0x0008, 0x0032, b"TM", _encode_time(frame.acquisition_time).encode("ascii")),
            _element(0x0010, 0x0020, b"LO", frame.patient_id.encode("ascii")),
            _element(0x0020, 0x000E, b"UI", frame.series_uid.encode("ascii")),
            _element(0x0020, 0x1041, b"DS", f"{frame.slice_location:.6f}".encode("ascii")),
            _element(0x0028, 0x0010, b"US", struct.pack("<H", frame.rows)),
            _element(0x0028, 0x0011, b"US", struct.pack("<H", frame.columns)),
            _element(0x0028, 0x1052, b"DS", f"{frame.intercept:.6f}".encode("ascii")),
            _element(0x0028, 0x1053, b"DS", f"{frame.slope:.6f}".encode("ascii")),
            _element(0x7FE0, 0x0010, b"OW", frame.stored.astype("<u2").tobytes()),
        ]
    )
    return b"\x00" * 128 + b"DICM" + meta + ds


def assemble_volume(
    frames: list[DicomFrame],
    location_tolerance: float = 0.5,
    default_frame_interval: float = DEFAULT_FRAME_INTERVAL_S,
) -> CtpVolume:
    """Group frames by slice location and order each group by acquisition time.

    Locations within `location_tolerance` mm collapse to one slice index.
    Raises if the resulting (T x S) grid is ragged or has duplicates.
    """
    if not frames:
        raise ValidationError("no frames to assemble")
    pid = frames[0].patient_id
    uid = frames[0].series_uid
    shape = (frames[0].rows, frames[0].columns)
    for f in frames:
        if (f.patient_id, f.series_uid) != (pid, uid):
            raise ValidationError("frames mix patients or series")
        if (f.rows, f.columns) != shape:
            raise ValidationError("frames have inconsistent dimensions")

    # Cluster slice locations.
    locs = sorted({f.slice_location for f in frames})
    centers: list[float] = []
    for loc in locs:
        if not centers or loc - centers[-1] > location_tolerance:
            centers.append(loc)
    groups: dict[int, list[DicomFrame]] = {i: [] for i in range(len(centers))}
    for f in frames:
        idx = min(range(len(centers)), key=lambda i: abs(centers[i] - f.slice_location))
        groups[idx].append(f)

    sizes = {len(g) for g in groups.values()}
    if len(sizes) != 1:
        detail = {i: len(g) for i, g in groups.items()}
        raise InconsistentAcquisitionError(
            f"ragged acquisition grid: frames per slice = {detail}"
        )
    n_t = sizes.pop()

    s = len(centers)
    voxels = np.empty((n_t, s, shape[0], shape[1]), dtype=np.float32)
    deltas = []
    for si in range(s):
        ordered = sorted(groups[si], key=lambda f: f.acquisition_time)
        times = [f.acquisition_time for f in ordered]
        if len(set(times)) != len(times):
            raise DuplicateFrameError(
                f"duplicate (slice, time) pair at slice location {centers[si]}"
            )
        deltas.extend(np.diff(times))
        for ti, f in enumerate(ordered):
            voxels[ti, si] = f.calibrated
    interval = float(np.median(deltas)) if deltas and np.median(deltas) > 0 else default_frame_interval
    return CtpVolume(patient_id=pid or "unknown", voxels=voxels, frame_interval=interval)
