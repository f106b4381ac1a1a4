"""Time-tag containers and the PTAG / CSV stream formats.

PTAG layout (little endian)::

    offset  size  field
    0       6     magic  b"PTAG1\\0"
    6       2     version (u16, currently 1)
    8       8     reserved, zero
    16      9*N   records: timestamp_ps (u64) + detector id (u8)

Detector ids: R1 = 0, R2 = 1, T1 = 2.  Records are sorted by timestamp,
ties broken by detector id.
"""

from __future__ import annotations

import enum
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import FormatError

PTAG_MAGIC = b"PTAG1\x00"
PTAG_VERSION = 1
_PTAG_HEADER = struct.Struct("<6sH8x")
RECORD_DTYPE = np.dtype([("timestamp_ps", "<u8"), ("detector", "u1")])
assert _PTAG_HEADER.size == 16 and RECORD_DTYPE.itemsize == 9


class Detector(enum.IntEnum):
    R1 = 0
    R2 = 1
    T1 = 2

    @classmethod
    def parse(cls, name) -> "Detector":
        if isinstance(name, Detector):
            return name
        if isinstance(name, (int, np.integer)) and not isinstance(name, bool):
            try:
                return cls(int(name))
            except ValueError:
                raise ValueError(f"unknown detector id {name}; expected 0 (R1), 1 (R2) or 2 (T1)") from None
        try:
            return cls[str(name).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown detector {name!r}; expected one of R1, R2, T1") from None


class TimeTag(NamedTuple):
    timestamp_ps: int
    detector: Detector


@dataclass(frozen=True, eq=False)
class TimeTags:
    """Immutable struct-of-arrays stream of detection events."""

    timestamp_ps: np.ndarray
    detector: np.ndarray

    def __post_init__(self):
        ts = np.ascontiguousarray(self.timestamp_ps, dtype=np.int64)
        det = np.ascontiguousarray(self.detector, dtype=np.uint8)
        if ts.shape != det.shape or ts.ndim != 1:
            raise ValueError("timestamp and detector arrays must be 1-D and equal length")
        ts.setflags(write=False)
        det.setflags(write=False)
        object.__setattr__(self, "timestamp_ps", ts)
        object.__setattr__(self, "detector", det)

    @classmethod
    def empty(cls) -> "TimeTags":
        return cls(np.empty(0, np.int64), np.empty(0, np.uint8))

    @classmethod
    def from_channels(cls, channels: dict) -> "TimeTags":
        """Merge per-detector timestamp arrays into one sorted stream."""
        ts_parts, det_parts = [], []
        for det, ts in channels.items():
            ts = np.asarray(ts, dtype=np.int64)
            ts_parts.append(ts)
            det_parts.append(np.full(ts.size, int(Detector.parse(det)), dtype=np.uint8))
        if not ts_parts:
            return cls.empty()
        ts = np.concatenate(ts_parts)
        det = np.concatenate(det_parts)
        order = np.lexsort((det, ts))
        return cls(ts[order], det[order])

    def __eq__(self, other):
        if not isinstance(other, TimeTags):
            return NotImplemented
        return np.array_equal(self.timestamp_ps, other.timestamp_ps) and np.array_equal(self.detector, other.detector)

    __hash__ = None

    def __len__(self):
        return self.timestamp_ps.size

    def __getitem__(self, i) -> TimeTag:
        return TimeTag(int(self.timestamp_ps[i]), Detector(int(self.detector[i])))

    def __iter__(self) -> Iterator[TimeTag]:
        for t, d in zip(self.timestamp_ps.tolist(), self.detector.tolist()):
            yield TimeTag(t, Detector(d))

    def channel(self, detector) -> np.ndarray:
        """Sorted timestamps (ps) of one detector."""
        return self.timestamp_ps[self.detector == int(Detector.parse(detector))]

    def counts(self) -> dict:
        n = np.bincount(self.detector, minlength=len(Detector))
        return {d.name: int(n[d]) for d in Detector}

    def is_sorted(self) -> bool:
        if len(self) < 2:
            return True
        dt = np.diff(self.timestamp_ps)
        if np.any(dt < 0):
            return False
        ties = dt == 0
        return not np.any(np.diff(self.detector.astype(np.int16))[ties] < 0)

    def equals(self, other: "TimeTags") -> bool:
        return np.array_equal(self.timestamp_ps, other.timestamp_ps) and np.array_equal(
            self.detector, other.detector
        )


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to ``path`` through a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_ptag(tags: TimeTags) -> bytes:
    rec = np.empty(len(tags), dtype=RECORD_DTYPE)
    rec["timestamp_ps"] = tags.timestamp_ps
    rec["detector"] = tags.detector
    return _PTAG_HEADER.pack(PTAG_MAGIC, PTAG_VERSION) + rec.tobytes()


def decode_ptag(data: bytes) -> TimeTags:
    if len(data) < _PTAG_HEADER.size:
        raise FormatError(f"PTAG file too short for its 16-byte header ({len(data)} bytes)", len(data))
    magic, version = _PTAG_HEADER.unpack_from(data)
    if magic != PTAG_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {PTAG_MAGIC!r}", 0)
    if version != PTAG_VERSION:
        raise FormatError(f"unsupported PTAG version {version}, expected {PTAG_VERSION}", 6)
    body = len(data) - _PTAG_HEADER.size
    n, extra = divmod(body, RECORD_DTYPE.itemsize)
    if extra:
        raise FormatError(
            f"truncated record: {extra} trailing bytes do not form a 9-byte record",
            _PTAG_HEADER.size + n * RECORD_DTYPE.itemsize,
        )
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=n, offset=_PTAG_HEADER.size)
    det = rec["detector"]
    bad = np.flatnonzero(det > max(Detector))
    if bad.size:
        i = int(bad[0])
        raise FormatError(
            f"record {i}: detector id {int(det[i])} is not one of 0 (R1), 1 (R2), 2 (T1)",
            _PTAG_HEADER.size + i * RECORD_DTYPE.itemsize + 8,
        )
    ts = rec["timestamp_ps"]
    if n and ts.max() > np.iinfo(np.int64).max:
        raise FormatError("timestamp exceeds signed 64-bit range", None)
    tags = TimeTags(ts.astype(np.int64), det.copy())
    if not tags.is_sorted():
        dt = np.diff(tags.timestamp_ps)
        ties = np.concatenate([[False], dt == 0])
        back = np.concatenate([[False], dt < 0]) | (
            ties & np.concatenate([[False], np.diff(tags.detector.astype(np.int16)) < 0])
        )
        i = int(np.flatnonzero(back)[0])
        raise FormatError(f"record {i} is out of timestamp order", _PTAG_HEADER.size + i * RECORD_DTYPE.itemsize)
    return tags


def write_ptag(path, tags: TimeTags) -> None:
    atomic_write(path, encode_ptag(tags))


def read_ptag(path) -> TimeTags:
    return decode_ptag(Path(path).read_bytes())


def encode_tags_csv(tags: TimeTags) -> bytes:
    names = np.array([d.name for d in Detector])
    lines = ["timestamp_ps,detector"]
    lines += [f"{t},{n}" for t, n in zip(tags.timestamp_ps.tolist(), names[tags.detector].tolist())]
    return ("\n".join(lines) + "\n").encode()


def decode_tags_csv(text: str) -> TimeTags:
    ts, det = [], []
    offset = 0
    for lineno, line in enumerate(text.splitlines(keepends=True)):
        stripped = line.strip()
        if lineno == 0 and stripped.replace(" ", "") == "timestamp_ps,detector":
            offset += len(line.encode())
            continue
        if stripped:
            parts = stripped.split(",")
            try:
                if len(parts) != 2:
                    raise ValueError("expected two fields")
                t = int(parts[0])
                if t < 0:
                    raise ValueError("negative timestamp")
                d = Detector.parse(parts[1])
            except ValueError as exc:
                raise FormatError(f"line {lineno + 1}: {exc}", offset) from None
            ts.append(t)
            det.append(int(d))
        offset += len(line.encode())
    tags = TimeTags(np.array(ts, dtype=np.int64), np.array(det, dtype=np.uint8))
    if not tags.is_sorted():
        raise FormatError("CSV time tags are not sorted by timestamp")
    return tags


def write_tags_csv(path, tags: TimeTags) -> None:
    atomic_write(path, encode_tags_csv(tags))


def read_tags(path) -> TimeTags:
    """Read a PTAG or CSV tag file, chosen by content."""
    data = Path(path).read_bytes()
    if data[:4] == b"PTAG" or str(path).endswith(".ptag"):
        return decode_ptag(data)
    return decode_tags_csv(data.decode())
