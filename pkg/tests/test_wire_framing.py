"""
Tests for the length-prefixed frame codec.
"""
import os
import socket
import sys
import unittest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import FrameError, ProtocolAbort
from src.services.wire_framing import (
    FRAME_OVERHEAD,
    HEADER,
    MAGIC,
    VERSION,
    MsgType,
    frame_decode,
    frame_encode,
    recv_frame,
    send_frame,
)


class TestFrameCodec(unittest.TestCase):

    def test_layout(self):
        frame = frame_encode(MsgType.SYNDROME, b"abc")
        self.assertEqual(len(frame), FRAME_OVERHEAD + 3)
        self.assertEqual(frame[:4], b"\x51\x4b\x01\x05")
        self.assertEqual(frame[4:8], b"\x00\x00\x00\x03")
        self.assertEqual(frame_decode(frame), (MsgType.SYNDROME, b"abc"))

    def test_empty_payload(self):
        self.assertEqual(frame_decode(frame_encode(MsgType.ABORT, b"")), (0xFF, b""))

    def test_corruption_is_detected(self):
        frame = bytearray(frame_encode(MsgType.HELLO, b"parameters"))
        frame[10] ^= 0x01
        with self.assertRaises(FrameError):
            frame_decode(bytes(frame))

    def test_bad_header_fields(self):
        frame = frame_encode(MsgType.HELLO, b"x")
        with self.assertRaises(FrameError):
            frame_decode(b"XX" + frame[2:])
        with self.assertRaises(FrameError):
            frame_decode(frame[:2] + b"\x02" + frame[3:])
        with self.assertRaises(FrameError):
            frame_decode(frame[:-1])
        with self.assertRaises(FrameError):
            frame_decode(frame + b"\x00")
        with self.assertRaises(FrameError):
            frame_encode(0x100, b"")

    def test_frame_errors_abort_the_protocol(self):
        self.assertTrue(issubclass(FrameError, ProtocolAbort))


class TestSocketTransport(unittest.TestCase):

    def test_frames_cross_a_socket_pair(self):
        a, b = socket.socketpair()
        try:
            send_frame(a, MsgType.BASIS_REVEAL, b"\x01" * 5000)
            send_frame(a, MsgType.KEY_CONFIRM, b"ok")
            self.assertEqual(recv_frame(b), (MsgType.BASIS_REVEAL, b"\x01" * 5000))
            self.assertEqual(recv_frame(b), (MsgType.KEY_CONFIRM, b"ok"))
            a.close()
            with self.assertRaises(FrameError):
                recv_frame(b)
        finally:
            b.close()

    def test_oversized_announcement_is_rejected_before_reading(self):
        a, b = socket.socketpair()
        try:
            a.sendall(HEADER.pack(MAGIC, VERSION, MsgType.SYNDROME, 2 ** 32 - 1))
            with self.assertRaises(FrameError):
                recv_frame(b)
            send_frame(a, MsgType.PA_SEED, b"\x00" * 5000)
            with self.assertRaises(FrameError):
                recv_frame(b, max_payload=4096)
        finally:
            a.close()
            b.close()


if __name__ == '__main__':
    unittest.main()
