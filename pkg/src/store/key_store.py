"""
Key material files: u64 little-endian bit length, then the bits packed
most-significant-bit first, zero-padded to a whole byte.
"""
import logging
import struct

import numpy as np

from ..errors import FileFormatError

# Configure logging
logger = logging.getLogger(__name__)

LENGTH = struct.Struct("<Q")


def encode_bits(bits: np.ndarray) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    return LENGTH.pack(len(bits)) + np.packbits(bits).tobytes()


def decode_bits(data: bytes, source: str = "key data") -> np.ndarray:
    if len(data) < LENGTH.size:
        raise FileFormatError(f"{source}: missing length header")
    (n,) = LENGTH.unpack_from(data)
    body = data[LENGTH.size:]
    if len(body) != (n + 7) // 8:
        raise FileFormatError(f"{source}: {len(body)} bytes do not hold exactly {n} bits")
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8))
    if bits[n:].any():
        raise FileFormatError(f"{source}: padding bits must be zero")
    return bits[:n].copy()


def write_key(path: str, bits: np.ndarray) -> None:
    try:
        with open(path, "wb") as f:
            f.write(encode_bits(bits))
    except OSError as e:
        logger.error(f"Error writing key to {path}: {str(e)}")
        raise FileFormatError(f"cannot write {path}: {e}") from e
    logger.debug(f"Wrote {len(bits)} key bits to {path}")


def read_key(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        logger.error(f"Error reading key from {path}: {str(e)}")
        raise FileFormatError(f"cannot read {path}: {e}") from e
    return decode_bits(data, path)
