"""
Length-prefixed, CRC-protected frames for the post-processing channel.

Frame layout (all integers big-endian):
    [2 bytes - magic 0x51 0x4B]
    [1 byte  - version 0x01]
    [1 byte  - message type]
    [4 bytes - payload length]
    [N bytes - payload]
    [4 bytes - CRC-32 over type, length and payload]
"""
import logging
import socket
import struct
import zlib
from enum import IntEnum
from typing import Tuple

from ..errors import FrameError

logger = logging.getLogger(__name__)

MAGIC = b"\x51\x4b"
VERSION = 0x01
HEADER = struct.Struct("!2sBBI")
CRC = struct.Struct("!I")
HEADER_SIZE = HEADER.size
FRAME_OVERHEAD = HEADER_SIZE + CRC.size
MAX_PAYLOAD_SIZE = 2 ** 32 - 1
# Largest payload a receiving side accepts; longer announcements are rejected before reading.
MAX_FRAME_PAYLOAD = 64 << 20


class MsgType(IntEnum):
    HELLO = 0x01
    SECOND_SUMMARY = 0x02
    BASIS_REVEAL = 0x03
    SIFT_INDICES = 0x04
    SYNDROME = 0x05
    VERIFY_TAG = 0x06
    PA_SEED = 0x07
    KEY_CONFIRM = 0x08
    REVEAL_REQUEST = 0x09
    REVEAL = 0x0A
    ABORT = 0xFF


def _crc(msg_type: int, length: int, payload: bytes) -> int:
    return zlib.crc32(payload, zlib.crc32(struct.pack("!BI", msg_type, length))) & 0xFFFFFFFF


def frame_encode(msg_type: int, payload: bytes) -> bytes:
    """Serialize one frame."""
    if len(payload) > MAX_PAYLOAD_SIZE:
        raise FrameError(f"payload too large: {len(payload)} bytes")
    if not 0 <= int(msg_type) <= 0xFF:
        raise FrameError(f"message type out of range: {msg_type}")
    header = HEADER.pack(MAGIC, VERSION, int(msg_type), len(payload))
    return header + payload + CRC.pack(_crc(int(msg_type), len(payload), payload))


def parse_header(header: bytes) -> Tuple[int, int]:
    """Validate a frame header; returns (msg_type, payload length)."""
    if len(header) < HEADER_SIZE:
        raise FrameError("truncated frame header")
    magic, version, msg_type, length = HEADER.unpack(header[:HEADER_SIZE])
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FrameError(f"unknown frame version {version}")
    return msg_type, length


def frame_decode(data: bytes) -> Tuple[int, bytes]:
    """
    Parse exactly one frame.

    Returns:
        (msg_type, payload). The type is returned as an int; mapping it to
        MsgType is left to the session, which aborts on unknown types.

    Raises:
        FrameError: On bad magic, version, truncation, trailing bytes or CRC mismatch.
    """
    msg_type, length = parse_header(data)
    if len(data) != FRAME_OVERHEAD + length:
        raise FrameError(f"frame holds {len(data)} bytes, header announces {FRAME_OVERHEAD + length}")
    payload = bytes(data[HEADER_SIZE:HEADER_SIZE + length])
    (crc,) = CRC.unpack(data[HEADER_SIZE + length:])
    if crc != _crc(msg_type, length, payload):
        raise FrameError("CRC mismatch")
    return msg_type, payload


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    """Read exactly n bytes from sock."""
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            raise FrameError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def recv_frame(sock: socket.socket, max_payload: int = MAX_FRAME_PAYLOAD) -> Tuple[int, bytes]:
    """
    Read one frame from a stream socket; socket timeouts propagate.

    Raises:
        FrameError: If the header announces more than max_payload bytes, or
            on any decoding error.
    """
    header = _recv_exact(sock, HEADER_SIZE)
    _, length = parse_header(header)
    if length > max_payload:
        raise FrameError(f"frame announces {length} payload bytes, limit is {max_payload}")
    rest = _recv_exact(sock, length + CRC.size)
    return frame_decode(header + rest)


def send_frame(sock: socket.socket, msg_type: int, payload: bytes) -> bytes:
    frame = frame_encode(msg_type, payload)
    sock.sendall(frame)
    return frame
