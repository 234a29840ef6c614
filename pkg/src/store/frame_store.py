"""
Beacon camera frame files: a sequence of records, each "FRAM", u32 rows,
u32 cols (little-endian), then rows * cols float32 intensities row-major.
"""
import logging
import struct
from typing import List

import numpy as np

from ..errors import FileFormatError

# Configure logging
logger = logging.getLogger(__name__)

MAGIC = b"FRAM"
HEADER = struct.Struct("<4sII")


def write_frames(path: str, frames: List[np.ndarray]) -> None:
    try:
        with open(path, "wb") as f:
            for frame in frames:
                frame = np.asarray(frame, dtype="<f4")
                if frame.ndim != 2:
                    raise FileFormatError("frames must be two-dimensional")
                f.write(HEADER.pack(MAGIC, frame.shape[0], frame.shape[1]))
                f.write(np.ascontiguousarray(frame).tobytes())
    except OSError as e:
        logger.error(f"Error writing frames to {path}: {str(e)}")
        raise FileFormatError(f"cannot write {path}: {e}") from e


def read_frames(path: str) -> List[np.ndarray]:
    """
    Read every frame of a frame file.

    Raises:
        FileFormatError: On a bad magic or a truncated record.
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        logger.error(f"Error reading frames from {path}: {str(e)}")
        raise FileFormatError(f"cannot read {path}: {e}") from e
    frames, pos = [], 0
    while pos < len(data):
        if len(data) - pos < HEADER.size:
            raise FileFormatError(f"{path}: truncated frame header at byte {pos}")
        magic, rows, cols = HEADER.unpack_from(data, pos)
        if magic != MAGIC:
            raise FileFormatError(f"{path}: bad frame magic {magic!r} at byte {pos}")
        pos += HEADER.size
        size = rows * cols * 4
        if len(data) - pos < size:
            raise FileFormatError(f"{path}: truncated frame data at byte {pos}")
        frames.append(np.frombuffer(data, dtype="<f4", count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float32))
        pos += size
    return frames
