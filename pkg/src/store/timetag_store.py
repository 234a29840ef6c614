"""
Binary time-tag files.

Header (18 bytes, little-endian): magic "TTAG", u16 version (1), u32
resolution in ps (1), 8 reserved zero bytes. Records (16 bytes): u64
timestamp_ps, u8 channel, u8 flags, 6 zero bytes.

Channels: prepared state 0-3 (Early, Late, Plus, Minus) on transmitter files,
detector port 0-1 on receiver files. Flags: bit 0 marks simulated background
clicks (stripped in blind mode); bits 1-2 hold the intensity class on
transmitter files.
"""
import logging
import os
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..errors import FileFormatError
from ..services.qkd_core import pulse_index_at
from ..services.receiver_model import DetectionBatch
from ..services.source_model import PulseTrain
from ..services.timing_analysis import EmissionBlock

# Configure logging
logger = logging.getLogger(__name__)

MAGIC = b"TTAG"
VERSION = 1
RESOLUTION_PS = 1
HEADER = struct.Struct("<4sHI8s")
RECORD_DTYPE = np.dtype([("timestamp", "<u8"), ("channel", "u1"), ("flags", "u1"), ("reserved", "V6")])

FLAG_BACKGROUND = 0x01
CLASS_SHIFT = 1
CLASS_MASK = 0x06


@dataclass
class TimeTagFile:
    timestamp: np.ndarray
    channel: np.ndarray
    flags: np.ndarray

    def __len__(self) -> int:
        return len(self.timestamp)


class TimeTagWriter:
    """
    Streams records into a time-tag file in non-decreasing timestamp order,
    one append() per chunk.
    """

    def __init__(self, path: str):
        self.path = path
        self.count = 0
        self._last = 0
        try:
            self._file = open(path, "wb")
            self._file.write(HEADER.pack(MAGIC, VERSION, RESOLUTION_PS, bytes(8)))
        except OSError as e:
            logger.error(f"Error opening {path} for writing: {str(e)}")
            raise FileFormatError(f"cannot write {path}: {e}") from e

    def append(self, tags: TimeTagFile) -> None:
        ts = np.asarray(tags.timestamp, dtype=np.int64)
        if len(ts) == 0:
            return
        if ts[0] < self._last or np.any(np.diff(ts) < 0):
            raise FileFormatError(f"timestamps written to {self.path} must be non-decreasing")
        records = np.zeros(len(ts), dtype=RECORD_DTYPE)
        records["timestamp"] = ts
        records["channel"] = tags.channel
        records["flags"] = tags.flags
        try:
            self._file.write(records.tobytes())
        except OSError as e:
            logger.error(f"Error writing time tags to {self.path}: {str(e)}")
            raise FileFormatError(f"cannot write {self.path}: {e}") from e
        self.count += len(ts)
        self._last = int(ts[-1])

    def close(self) -> None:
        self._file.close()
        logger.debug(f"Wrote {self.count} time tags to {self.path}")

    def __enter__(self) -> "TimeTagWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_timetags(path: str, tags: TimeTagFile) -> None:
    """
    Write a time-tag file.

    Raises:
        FileFormatError: If timestamps decrease or the file cannot be written.
    """
    if len(tags) and int(np.min(tags.timestamp)) < 0:
        raise FileFormatError("timestamps must be non-negative")
    with TimeTagWriter(path) as writer:
        writer.append(tags)


def read_timetags(path: str) -> TimeTagFile:
    """
    Read and validate a time-tag file.

    Raises:
        FileFormatError: On a bad header, a partial record or decreasing timestamps.
    """
    try:
        size = os.path.getsize(path)
        with open(path, "rb") as f:
            header = f.read(HEADER.size)
            if len(header) < HEADER.size:
                raise FileFormatError(f"{path}: truncated header")
            magic, version, resolution, reserved = HEADER.unpack(header)
            if magic != MAGIC:
                raise FileFormatError(f"{path}: bad magic {magic!r}")
            if version != VERSION:
                raise FileFormatError(f"{path}: unsupported version {version}")
            if resolution != RESOLUTION_PS:
                raise FileFormatError(f"{path}: unsupported resolution {resolution} ps")
            if reserved != bytes(8):
                raise FileFormatError(f"{path}: reserved header bytes must be zero")
            body = size - HEADER.size
            if body % RECORD_DTYPE.itemsize:
                raise FileFormatError(f"{path}: {body} bytes of records is not a whole number of records")
            records = np.fromfile(f, dtype=RECORD_DTYPE)
    except OSError as e:
        logger.error(f"Error reading time tags from {path}: {str(e)}")
        raise FileFormatError(f"cannot read {path}: {e}") from e
    ts = records["timestamp"].astype(np.int64)
    if len(ts) > 1 and np.any(np.diff(ts) < 0):
        raise FileFormatError(f"{path}: timestamps decrease")
    return TimeTagFile(ts, records["channel"].copy(), records["flags"].copy())


def detections_to_tags(batch: DetectionBatch, blind: bool = False) -> TimeTagFile:
    flags = np.zeros(len(batch), dtype=np.uint8) if blind else batch.is_background.astype(np.uint8)
    return TimeTagFile(batch.timestamp, batch.channel.astype(np.uint8), flags)


def tags_to_detections(tags: TimeTagFile) -> DetectionBatch:
    return DetectionBatch(
        timestamp=tags.timestamp,
        channel=tags.channel.astype(np.uint8),
        is_background=(tags.flags & FLAG_BACKGROUND).astype(bool),
        pulse_index=np.full(len(tags), -1, dtype=np.int64),
    )


def emissions_to_tags(pulses: PulseTrain) -> TimeTagFile:
    """Transmitter records: one per emitted (non-vacuum) pulse."""
    emitted = pulses.emission_events()
    flags = (emitted.intensity.astype(np.uint8) << CLASS_SHIFT) & CLASS_MASK
    return TimeTagFile(emitted.emission_time, emitted.state.astype(np.uint8), flags.astype(np.uint8))


def tags_to_emissions(tags: TimeTagFile, period: Fraction) -> EmissionBlock:
    return EmissionBlock(
        index=pulse_index_at(tags.timestamp, period),
        time=tags.timestamp,
        state=tags.channel.astype(np.int64),
        intensity=((tags.flags & CLASS_MASK) >> CLASS_SHIFT).astype(np.int64),
    )
