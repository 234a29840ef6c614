"""
Two-party post-processing session over a reliable byte stream.

The receiver correlates its detections against the public pulse grid and
reports which pulses it saw and in which basis it measured them; only then
does the transmitter reveal its bases and intensity classes. Both sides keep
the signal-class bits with matching bases, reconcile them block by block with
LDPC syndromes sent by the receiver (a block that fails its first decoding
pass is retried once after the receiver discloses the bits the transmitter
asks for), verify each block with a 64-bit Toeplitz tag and compress the
surviving blocks with a Toeplitz hash.

Phases run in the order Hello, Sifting, Reconciling, Verifying, Amplifying,
Done. Any message that is not legal at the current point of the flow, any
frame that fails to decode and any timeout aborts the session on both sides.
"""
import contextlib
import json
import logging
import socket
import struct
import time
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from fractions import Fraction
from typing import Callable, List, Optional, Set, Tuple

import numpy as np

from ..errors import ConfigError, DecodeFailure, FrameError, ProtocolAbort
from .key_distillation import BlockOutcome, pa_output_length
from .ldpc_codes import (
    CodesConfig,
    DecodeResult,
    code_for,
    ldpc_decode,
    ldpc_syndrome,
    retry_decode,
    reveal_positions,
    split_blocks,
)
from .privacy_amplification import TAG_BITS, ToeplitzSpec, random_seed_bits, toeplitz_hash, verify_tag
from .qkd_core import PS_PER_SECOND, STATE_BASIS, STATE_BIT, pulse_period
from .receiver_model import DetectionBatch
from .source_model import IntensityKind
from .timing_analysis import CoincidenceConfig, classify_on_grid, optimize_folded_delay
from .wire_framing import MsgType, frame_encode, recv_frame

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
NO_DELAY = -(2 ** 63)
END_OF_SYNDROMES = 0xFFFFFFFF
NOT_EMITTED = 0x08
MIN_DECOY_SAMPLE = 100

FLAG_RETAINED = 0x01
FLAG_FINAL = 0x02


@dataclass(frozen=True)
class SessionConfig:
    """Session transport and policy settings."""

    timeout: float = 30.0
    qber_estimate: float = 0.05
    pa_phi: float = 1.0
    endpoint: str = "127.0.0.1:5151"
    rng_seed: int = 6

    def __post_init__(self):
        problems = []
        if self.timeout <= 0:
            problems.append("timeout must be positive")
        if not 0.0 < self.qber_estimate < 0.5:
            problems.append("qber_estimate must lie in (0, 0.5)")
        if self.pa_phi < 0:
            problems.append("pa_phi must be >= 0")
        try:
            parse_endpoint(self.endpoint)
        except ConfigError as e:
            problems.append(str(e))
        if problems:
            raise ConfigError("; ".join(f"session.{p}" for p in problems))


class Role(Enum):
    TRANSMITTER = "tx"
    RECEIVER = "rx"


class Phase(IntEnum):
    HELLO = 0
    SIFTING = 1
    RECONCILING = 2
    VERIFYING = 3
    AMPLIFYING = 4
    DONE = 5
    ABORTED = 6


@dataclass(frozen=True)
class TranscriptEntry:
    direction: str
    msg_type: int
    payload: bytes


@dataclass
class SessionResult:
    """What one side holds when the session completes."""

    role: Role
    key: np.ndarray
    sifted_bits: int
    reconciled_bits: int
    leaked_bits: int
    qber: Optional[float]
    e_nu: Optional[float]
    seconds_retained: int
    blocks: List[BlockOutcome] = field(default_factory=list)
    transcript: List[TranscriptEntry] = field(default_factory=list)


def parse_endpoint(endpoint: str) -> Tuple[str, int]:
    """Split 'host:port'."""
    host, sep, port = str(endpoint).rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
        raise ConfigError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def _unpack_bits(data: bytes, count: int) -> np.ndarray:
    if len(data) != (count + 7) // 8:
        raise FrameError(f"bit field of {len(data)} bytes cannot hold exactly {count} bits")
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=count)


# Payload codecs. All multi-byte integers are big-endian.

def encode_second_summary(second: int, flags: int, delay: Optional[int], indices: np.ndarray,
                          basis: np.ndarray) -> bytes:
    header = struct.pack("!IBqI", second, flags, NO_DELAY if delay is None else int(delay), len(indices))
    return header + np.asarray(indices, dtype=">u8").tobytes() + _pack_bits(basis)


def decode_second_summary(payload: bytes) -> Tuple[int, int, Optional[int], np.ndarray, np.ndarray]:
    head = struct.calcsize("!IBqI")
    if len(payload) < head:
        raise FrameError("truncated SECOND_SUMMARY")
    second, flags, delay, count = struct.unpack("!IBqI", payload[:head])
    end = head + 8 * count
    if len(payload) < end:
        raise FrameError("truncated SECOND_SUMMARY indices")
    indices = np.frombuffer(payload[head:end], dtype=">u8").astype(np.int64)
    basis = _unpack_bits(payload[end:], count)
    return second, flags, None if delay == NO_DELAY else delay, indices, basis


def encode_basis_reveal(second: int, codes: np.ndarray) -> bytes:
    return struct.pack("!II", second, len(codes)) + np.asarray(codes, dtype=np.uint8).tobytes()


def decode_basis_reveal(payload: bytes) -> Tuple[int, np.ndarray]:
    if len(payload) < 8:
        raise FrameError("truncated BASIS_REVEAL")
    second, count = struct.unpack("!II", payload[:8])
    if len(payload) != 8 + count:
        raise FrameError("BASIS_REVEAL length does not match its count")
    return second, np.frombuffer(payload[8:], dtype=np.uint8).copy()


def encode_sift_indices(second: int, keep: np.ndarray, decoy_bits: np.ndarray) -> bytes:
    keep_bytes = _pack_bits(keep)
    return (struct.pack("!II", second, len(keep)) + keep_bytes + struct.pack("!I", len(decoy_bits))
            + _pack_bits(decoy_bits))


def decode_sift_indices(payload: bytes) -> Tuple[int, np.ndarray, np.ndarray]:
    if len(payload) < 8:
        raise FrameError("truncated SIFT_INDICES")
    second, count = struct.unpack("!II", payload[:8])
    keep_end = 8 + (count + 7) // 8
    if len(payload) < keep_end + 4:
        raise FrameError("truncated SIFT_INDICES")
    keep = _unpack_bits(payload[8:keep_end], count).astype(bool)
    (n_decoy,) = struct.unpack("!I", payload[keep_end:keep_end + 4])
    return second, keep, _unpack_bits(payload[keep_end + 4:], n_decoy)


def encode_reveal_request(requests: List[Tuple[int, np.ndarray]]) -> bytes:
    parts = [struct.pack("!I", len(requests))]
    for block, positions in requests:
        parts.append(struct.pack("!II", block, len(positions)) + np.asarray(positions, dtype=">u4").tobytes())
    return b"".join(parts)


def decode_reveal_request(payload: bytes) -> List[Tuple[int, np.ndarray]]:
    """(block index, ascending bit positions) per block the transmitter could not decode."""
    if len(payload) < 4:
        raise FrameError("truncated REVEAL_REQUEST")
    (count,) = struct.unpack("!I", payload[:4])
    requests, pos = [], 4
    for _ in range(count):
        if len(payload) < pos + 8:
            raise FrameError("truncated REVEAL_REQUEST")
        block, size = struct.unpack("!II", payload[pos:pos + 8])
        end = pos + 8 + 4 * size
        if len(payload) < end:
            raise FrameError("truncated REVEAL_REQUEST positions")
        requests.append((block, np.frombuffer(payload[pos + 8:end], dtype=">u4").astype(np.int64)))
        pos = end
    if pos != len(payload):
        raise FrameError("trailing bytes in REVEAL_REQUEST")
    return requests


def encode_reveal(answers: List[Tuple[int, np.ndarray]]) -> bytes:
    parts = [struct.pack("!I", len(answers))]
    for block, bits in answers:
        parts.append(struct.pack("!II", block, len(bits)) + _pack_bits(bits))
    return b"".join(parts)


def decode_reveal(payload: bytes) -> List[Tuple[int, np.ndarray]]:
    if len(payload) < 4:
        raise FrameError("truncated REVEAL")
    (count,) = struct.unpack("!I", payload[:4])
    answers, pos = [], 4
    for _ in range(count):
        if len(payload) < pos + 8:
            raise FrameError("truncated REVEAL")
        block, size = struct.unpack("!II", payload[pos:pos + 8])
        end = pos + 8 + (size + 7) // 8
        if len(payload) < end:
            raise FrameError("truncated REVEAL bits")
        answers.append((block, _unpack_bits(payload[pos + 8:end], size)))
        pos = end
    if pos != len(payload):
        raise FrameError("trailing bytes in REVEAL")
    return answers


def reveal_codes(state: np.ndarray, intensity: np.ndarray, emitted: np.ndarray) -> np.ndarray:
    """One byte per pulse: bit 0 basis, bits 1-2 intensity class, NOT_EMITTED when nothing was sent."""
    codes = (STATE_BASIS[state] | (np.asarray(intensity, dtype=np.uint8) << 1)).astype(np.uint8)
    codes[~np.asarray(emitted, dtype=bool)] = NOT_EMITTED
    return codes


class Session:
    """
    One side of a post-processing session.

    The transmitter needs `emissions`, an object whose lookup(indices) returns
    (state, intensity, emitted) arrays for pulse indices. The receiver needs its
    sorted `detections`. sifted_key_hook(role, bits) may replace the sifted key
    before reconciliation; skip_error_correction makes the transmitter accept
    its blocks undecoded. Both exist for fault-injection tests.
    """

    def __init__(self, role: Role, sock: socket.socket, config: SessionConfig, codes: CodesConfig,
                 coincidence: CoincidenceConfig, repetition_rate: float, emissions=None,
                 detections: Optional[DetectionBatch] = None,
                 sifted_key_hook: Optional[Callable[[Role, np.ndarray], np.ndarray]] = None,
                 skip_error_correction: bool = False):
        if role == Role.TRANSMITTER and emissions is None:
            raise ConfigError("the transmitter side needs its emission records")
        if role == Role.RECEIVER and detections is None:
            raise ConfigError("the receiver side needs its detection records")
        self.role = role
        self.sock = sock
        self.config = config
        self.codes = codes
        self.coincidence = coincidence
        self.repetition_rate = repetition_rate
        self.period: Fraction = pulse_period(repetition_rate)
        self.emissions = emissions
        self.detections = detections
        self.sifted_key_hook = sifted_key_hook
        self.skip_error_correction = skip_error_correction
        self.phase = Phase.HELLO
        self.transcript: List[TranscriptEntry] = []
        self.rng = np.random.default_rng(np.random.SeedSequence(config.rng_seed, spawn_key=(0x5E55,)))

        self._key = np.zeros(0, dtype=np.uint8)
        self._decoy_bits = 0
        self._decoy_errors = 0
        self._seconds_retained = 0
        self._blocks: List[BlockOutcome] = []
        self._block_keys: List[np.ndarray] = []
        self._leaked = 0

    # Transport

    def _send(self, msg_type: MsgType, payload: bytes = b"") -> None:
        self.sock.sendall(frame_encode(msg_type, payload))
        self.transcript.append(TranscriptEntry("sent", int(msg_type), payload))

    def _recv(self, allowed: Set[MsgType]) -> Tuple[MsgType, bytes]:
        msg_type, payload = recv_frame(self.sock)
        self.transcript.append(TranscriptEntry("recv", msg_type, payload))
        if msg_type == MsgType.ABORT:
            raise ProtocolAbort(f"peer aborted: {payload.decode('utf-8', errors='replace')}")
        if msg_type not in {int(t) for t in allowed}:
            raise ProtocolAbort(f"message type 0x{msg_type:02X} is not legal in phase {self.phase.name}")
        return MsgType(msg_type), payload

    def _abort(self, reason: str) -> None:
        self.phase = Phase.ABORTED
        logger.error(f"Session ({self.role.value}) aborted: {reason}")
        if not reason.startswith("peer aborted"):
            with contextlib.suppress(OSError, FrameError):
                self._send(MsgType.ABORT, reason.encode("utf-8"))

    # Flow

    def run(self) -> SessionResult:
        """
        Run the session to completion.

        Raises:
            ProtocolAbort: On any protocol violation, malformed frame, peer abort or timeout.
        """
        self.sock.settimeout(self.config.timeout)
        try:
            self._hello()
            self.phase = Phase.SIFTING
            if self.role == Role.RECEIVER:
                self._sift_receiver()
            else:
                self._sift_transmitter()
            if self.sifted_key_hook is not None:
                self._key = np.asarray(self.sifted_key_hook(self.role, self._key.copy()), dtype=np.uint8)
            self.phase = Phase.RECONCILING
            self._reconcile()
            self.phase = Phase.VERIFYING
            self._verify()
            self.phase = Phase.AMPLIFYING
            final_key, qber = self._amplify()
            self._confirm(final_key)
            self.phase = Phase.DONE
        except ProtocolAbort as e:
            self._abort(e.reason)
            raise
        except socket.timeout:
            reason = f"timeout in phase {self.phase.name}"
            self._abort(reason)
            raise ProtocolAbort(reason)
        except OSError as e:
            reason = f"transport failure in phase {self.phase.name}: {e}"
            self._abort(reason)
            raise ProtocolAbort(reason)

        e_nu = self._decoy_errors / self._decoy_bits if self._decoy_bits else None
        logger.info(f"Session ({self.role.value}) done: {len(self._key)} sifted bits, "
                    f"{len(final_key)} final bits")
        return SessionResult(self.role, final_key, int(len(self._key)),
                             int(sum(len(k) for k in self._block_keys)), self._leaked, qber, e_nu,
                             self._seconds_retained, list(self._blocks), list(self.transcript))

    def _hello_payload(self) -> bytes:
        body = {
            "block_length": self.codes.block_length,
            "code_profile": self.codes.profile.value,
            "code_rate": self.codes.rate,
            "code_seed": self.codes.seed,
            "max_iterations": self.codes.max_iterations,
            "pa_phi": self.config.pa_phi,
            "reveal_bits": self.codes.reveal_bits,
            "repetition_rate": self.repetition_rate,
            "role": self.role.value,
            "version": PROTOCOL_VERSION,
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def _hello(self) -> None:
        mine = self._hello_payload()
        if self.role == Role.RECEIVER:
            self._send(MsgType.HELLO, mine)
            _, payload = self._recv({MsgType.HELLO})
        else:
            _, payload = self._recv({MsgType.HELLO})
            self._send(MsgType.HELLO, mine)
        try:
            theirs = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ProtocolAbort("malformed HELLO")
        ours = json.loads(mine.decode("utf-8"))
        if theirs.pop("role", None) == ours.pop("role"):
            raise ProtocolAbort("both parties claim the same role")
        if theirs != ours:
            differing = sorted(k for k in set(theirs) | set(ours) if theirs.get(k) != ours.get(k))
            raise ProtocolAbort(f"parameter mismatch in HELLO: {', '.join(differing)}")

    def _sift_receiver(self) -> None:
        det = self.detections
        seconds = det.timestamp // int(round(self.coincidence.aggregation * PS_PER_SECOND))
        n_seconds = int(seconds.max()) + 1 if len(seconds) else 0
        bounds = np.searchsorted(seconds, np.arange(n_seconds + 1))
        keys = []
        for s in range(n_seconds):
            lo, hi = bounds[s], bounds[s + 1]
            ts, ch = det.timestamp[lo:hi], det.channel[lo:hi]
            delay = optimize_folded_delay(ts, self.period, self.coincidence).delay
            retained = delay is not None and (hi - lo) / self.coincidence.aggregation >= self.coincidence.snr_threshold
            if retained:
                grid = classify_on_grid(ts, ch, delay, self.period, self.coincidence)
                indices, basis, bits = grid.pulse_index, grid.measured_basis, grid.measured_bits
                self._seconds_retained += 1
            else:
                indices = np.zeros(0, np.int64)
                basis = bits = np.zeros(0, np.uint8)
            self._send(MsgType.SECOND_SUMMARY,
                       encode_second_summary(s, FLAG_RETAINED if retained else 0, delay, indices, basis))
            _, payload = self._recv({MsgType.BASIS_REVEAL})
            second, codes = decode_basis_reveal(payload)
            if second != s or len(codes) != len(indices):
                raise ProtocolAbort(f"BASIS_REVEAL does not answer second {s}")
            emitted = codes != NOT_EMITTED
            keep = emitted & ((codes & 1) == basis)
            klass = (codes >> 1) & 0x3
            decoy = keep & (klass == IntensityKind.DECOY)
            self._send(MsgType.SIFT_INDICES, encode_sift_indices(s, keep, bits[decoy]))
            keys.append(bits[keep & (klass == IntensityKind.SIGNAL)])
        self._send(MsgType.SECOND_SUMMARY, encode_second_summary(n_seconds, FLAG_FINAL, None,
                                                                 np.zeros(0, np.int64), np.zeros(0, np.uint8)))
        self._key = np.concatenate(keys).astype(np.uint8) if keys else np.zeros(0, np.uint8)

    def _sift_transmitter(self) -> None:
        keys = []
        while True:
            _, payload = self._recv({MsgType.SECOND_SUMMARY})
            second, flags, _, indices, rx_basis = decode_second_summary(payload)
            if flags & FLAG_FINAL:
                break
            if flags & FLAG_RETAINED:
                self._seconds_retained += 1
            state, intensity, emitted = self.emissions.lookup(indices)
            codes = reveal_codes(state, intensity, emitted)
            self._send(MsgType.BASIS_REVEAL, encode_basis_reveal(second, codes))
            _, payload = self._recv({MsgType.SIFT_INDICES})
            sift_second, keep, rx_decoy_bits = decode_sift_indices(payload)
            expected = np.asarray(emitted, dtype=bool) & (STATE_BASIS[state] == rx_basis)
            if sift_second != second or not np.array_equal(keep, expected):
                raise ProtocolAbort(f"sift indices for second {second} do not match the revealed bases")
            tx_bits = STATE_BIT[state]
            decoy = keep & (intensity == IntensityKind.DECOY)
            if int(decoy.sum()) != len(rx_decoy_bits):
                raise ProtocolAbort(f"decoy disclosure for second {second} has the wrong length")
            self._decoy_bits += len(rx_decoy_bits)
            self._decoy_errors += int(np.count_nonzero(tx_bits[decoy] != rx_decoy_bits))
            keys.append(tx_bits[keep & (intensity == IntensityKind.SIGNAL)])
        self._key = np.concatenate(keys).astype(np.uint8) if keys else np.zeros(0, np.uint8)

    def _crossover(self) -> float:
        if self._decoy_bits >= MIN_DECOY_SAMPLE:
            return min(max(self._decoy_errors / self._decoy_bits, 1e-3), 0.45)
        return self.config.qber_estimate

    def _reconcile(self) -> None:
        n = self.codes.block_length
        blocks = split_blocks(self._key, n)
        code = code_for(self.codes) if blocks else None
        if self.role == Role.RECEIVER:
            for k, block in enumerate(blocks):
                self._send(MsgType.SYNDROME, struct.pack("!I", k) + _pack_bits(ldpc_syndrome(block, code)))
                self._leaked += code.m
            self._send(MsgType.SYNDROME, struct.pack("!I", END_OF_SYNDROMES))
            _, payload = self._recv({MsgType.REVEAL_REQUEST})
            answers = []
            for k, positions in decode_reveal_request(payload):
                if k >= len(blocks) or len(positions) > self.codes.reveal_bits:
                    raise ProtocolAbort(f"REVEAL_REQUEST for block {k} exceeds what may be disclosed")
                if len(positions) and (positions.max() >= n or np.any(np.diff(positions) <= 0)):
                    raise ProtocolAbort(f"REVEAL_REQUEST for block {k} names invalid positions")
                answers.append((k, blocks[k][positions]))
                self._leaked += len(positions)
            self._send(MsgType.REVEAL, encode_reveal(answers))
            self._block_keys = blocks
            return

        crossover = self._crossover()
        remotes = self._receive_syndromes(len(blocks), code)
        results: List[Tuple[Optional[DecodeResult], int]] = []
        requests: List[Tuple[int, np.ndarray]] = []
        for k, remote in enumerate(remotes):
            if self.skip_error_correction:
                results.append((DecodeResult(blocks[k], 0, 0), 0))
                continue
            try:
                results.append((ldpc_decode(blocks[k], remote, code, crossover, self.codes.max_iterations), 1))
            except DecodeFailure as e:
                if self.codes.reveal_bits:
                    results.append((None, 2))
                    requests.append((k, reveal_positions(e.reliability, self.codes.reveal_bits)))
                else:
                    results.append((retry_decode(blocks[k], remote, code, crossover, self.codes.max_iterations), 2))
        self._send(MsgType.REVEAL_REQUEST, encode_reveal_request(requests))
        _, payload = self._recv({MsgType.REVEAL})
        answers = decode_reveal(payload)
        if [(k, len(p)) for k, p in requests] != [(k, len(b)) for k, b in answers]:
            raise ProtocolAbort("REVEAL does not answer the request")
        for (k, positions), (_, bits) in zip(requests, answers):
            self._leaked += len(positions)
            result = retry_decode(blocks[k], remotes[k], code, crossover, self.codes.max_iterations,
                                  known=(positions, bits))
            results[k] = (result, 2)
        for k, (result, attempts) in enumerate(results):
            if result is None:
                logger.warning(f"Block {k} failed to decode after {attempts} attempts; discarded")
                self._blocks.append(BlockOutcome(k, False, False, attempts, 0))
                self._block_keys.append(blocks[k])
            else:
                self._blocks.append(BlockOutcome(k, True, False, attempts, result.corrected_bits))
                self._block_keys.append(result.key)

    def _receive_syndromes(self, count: int, code) -> List[np.ndarray]:
        remotes = []
        for k in range(count + 1):
            _, payload = self._recv({MsgType.SYNDROME})
            if len(payload) < 4:
                raise FrameError("truncated SYNDROME")
            (index,) = struct.unpack("!I", payload[:4])
            if k == count:
                if index != END_OF_SYNDROMES:
                    raise ProtocolAbort("receiver holds more key blocks than the transmitter")
                break
            if index != k:
                raise ProtocolAbort(f"expected syndrome of block {k}, got {index}")
            remotes.append(_unpack_bits(payload[4:], code.m))
            self._leaked += code.m
        return remotes

    def _verify(self) -> None:
        if self.role == Role.TRANSMITTER:
            tag_seed = int(self.rng.integers(0, 2 ** 63))
            body = [struct.pack("!QI", tag_seed, len(self._blocks))]
            for outcome, key in zip(self._blocks, self._block_keys):
                tag = verify_tag(key, (tag_seed + outcome.index) % 2 ** 64) if outcome.decoded else 0
                body.append(struct.pack("!BQ", int(outcome.decoded), tag))
                if outcome.decoded:
                    self._leaked += TAG_BITS
            self._send(MsgType.VERIFY_TAG, b"".join(body))
            _, payload = self._recv({MsgType.VERIFY_TAG})
            if len(payload) != 4 + len(self._blocks):
                raise FrameError("VERIFY_TAG reply length does not match the block count")
            matches = np.frombuffer(payload[4:], dtype=np.uint8)
            for outcome, ok in zip(self._blocks, matches):
                outcome.verified = bool(ok) and outcome.decoded
                if outcome.decoded and not outcome.verified:
                    logger.warning(f"Block {outcome.index} failed verification; discarded")
            return

        _, payload = self._recv({MsgType.VERIFY_TAG})
        if len(payload) < 12:
            raise FrameError("truncated VERIFY_TAG")
        tag_seed, count = struct.unpack("!QI", payload[:12])
        if count != len(self._block_keys) or len(payload) != 12 + 9 * count:
            raise ProtocolAbort("VERIFY_TAG block count does not match")
        matches = []
        for k, key in enumerate(self._block_keys):
            status, tag = struct.unpack("!BQ", payload[12 + 9 * k: 21 + 9 * k])
            if status:
                self._leaked += TAG_BITS
            ok = bool(status) and verify_tag(key, (tag_seed + k) % 2 ** 64) == tag
            matches.append(ok)
            self._blocks.append(BlockOutcome(k, bool(status), ok, 0, 0))
        self._send(MsgType.VERIFY_TAG, struct.pack("!I", count) + bytes(int(m) for m in matches))

    def _reconciled_key(self) -> np.ndarray:
        kept = [key for outcome, key in zip(self._blocks, self._block_keys) if outcome.verified]
        return np.concatenate(kept).astype(np.uint8) if kept else np.zeros(0, np.uint8)

    def _amplify(self) -> Tuple[np.ndarray, Optional[float]]:
        reconciled = self._reconciled_key()
        self._block_keys = [key for outcome, key in zip(self._blocks, self._block_keys) if outcome.verified]
        n = len(reconciled)
        if self.role == Role.TRANSMITTER:
            corrected = sum(b.corrected_bits for b in self._blocks if b.verified)
            qber = corrected / n if n else None
            e_nu = self._decoy_errors / self._decoy_bits if self._decoy_bits >= MIN_DECOY_SAMPLE else 0.0
            phase_error = max(qber or 0.0, e_nu)
            m = pa_output_length(n, phase_error, self._leaked, self.config.pa_phi) if n else 0
            seed = random_seed_bits(n - 1, self.rng) if m else np.zeros(0, np.uint8)
            self._send(MsgType.PA_SEED, struct.pack("!III", m, corrected, n) + _pack_bits(seed))
        else:
            _, payload = self._recv({MsgType.PA_SEED})
            if len(payload) < 12:
                raise FrameError("truncated PA_SEED")
            m, corrected, tx_n = struct.unpack("!III", payload[:12])
            if tx_n != n:
                raise ProtocolAbort(f"reconciled length mismatch: {tx_n} != {n}")
            if m > n:
                raise ProtocolAbort("PA output longer than its input")
            seed = _unpack_bits(payload[12:], n - 1 if m else 0)
            qber = corrected / n if n else None
        if m == 0:
            logger.warning("No secret key: privacy amplification leaves zero bits")
            return np.zeros(0, np.uint8), qber
        return toeplitz_hash(reconciled, ToeplitzSpec(n, m, seed)), qber

    def _confirm(self, final_key: np.ndarray) -> None:
        if self.role == Role.TRANSMITTER:
            confirm_seed = int(self.rng.integers(0, 2 ** 63))
            self._send(MsgType.KEY_CONFIRM, struct.pack("!QQ", confirm_seed, verify_tag(final_key, confirm_seed)))
            _, payload = self._recv({MsgType.KEY_CONFIRM})
        else:
            _, payload = self._recv({MsgType.KEY_CONFIRM})
        if len(payload) != 16:
            raise FrameError("KEY_CONFIRM must carry 16 bytes")
        seed, tag = struct.unpack("!QQ", payload)
        if verify_tag(final_key, seed) != tag:
            raise ProtocolAbort("final key confirmation failed")
        if self.role == Role.RECEIVER:
            self._send(MsgType.KEY_CONFIRM, struct.pack("!QQ", seed, verify_tag(final_key, seed)))


def run_session(role: Role, sock: socket.socket, config: SessionConfig, codes: CodesConfig,
                coincidence: CoincidenceConfig, repetition_rate: float, **local_data) -> SessionResult:
    """Run one side of a session on a connected stream socket."""
    return Session(role, sock, config, codes, coincidence, repetition_rate, **local_data).run()


def open_transport(role: Role, config: SessionConfig) -> socket.socket:
    """
    Transmitter listens on the endpoint, receiver connects to it.

    The receiver retries until the session timeout so either side may start first.
    """
    host, port = parse_endpoint(config.endpoint)
    if role == Role.TRANSMITTER:
        with socket.create_server((host, port), reuse_port=False) as server:
            server.settimeout(config.timeout)
            try:
                conn, peer = server.accept()
            except socket.timeout:
                raise ProtocolAbort(f"no receiver connected to {config.endpoint} within {config.timeout} s")
            logger.info(f"Receiver connected from {peer[0]}:{peer[1]}")
            return conn
    deadline = time.monotonic() + config.timeout
    while True:
        try:
            return socket.create_connection((host, port), timeout=config.timeout)
        except OSError:
            if time.monotonic() >= deadline:
                raise ProtocolAbort(f"could not connect to {config.endpoint} within {config.timeout} s")
            time.sleep(0.1)
