"""
Receiver model: the multi-mode time-bin qubit decoder as a three-slot
interference measurement, followed by two single-photon detectors with
Gaussian timing jitter and uniform background clicks.

Time axis: detections are placed relative to the central slot. EarlySlot
events arrive bin_separation after it and LateSlot events bin_separation
before it; timing_analysis classifies with the same convention.
"""
import logging
import math
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import optimize

from ..errors import ConfigError, DomainError
from .qkd_core import PS_PER_SECOND, STATE_AMPLITUDES, Probability, TimeBinState
from .source_model import PulseRecord, PulseTrain, SourceConfig

logger = logging.getLogger(__name__)

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class DecoderConfig:
    """Interferometric decoder. Phases in rad, phase_drift_rms in rad/sqrt(s), rezero_interval in s."""

    visibility: float = 0.97
    throughput: float = 0.81
    phase_B: float = 0.0
    phase_drift_rms: float = 0.05
    bin_separation: int = 2000
    rezero_interval: float = 10.0
    rng_seed: int = 3

    def __post_init__(self):
        problems = []
        if not 0.0 <= self.visibility <= 1.0:
            problems.append("visibility must lie in [0, 1]")
        if not 0.0 <= self.throughput <= 1.0:
            problems.append("throughput must lie in [0, 1]")
        if self.phase_drift_rms < 0:
            problems.append("phase_drift_rms must be >= 0")
        if self.bin_separation <= 0:
            problems.append("bin_separation must be positive")
        if self.rezero_interval <= 0:
            problems.append("rezero_interval must be positive")
        if problems:
            raise ConfigError("; ".join(f"receiver.{p}" for p in problems))


@dataclass(frozen=True)
class DetectorConfig:
    """Single-photon detectors. jitter_fwhm in ps; background_per_pulse is a click probability per pulse slot."""

    jitter_fwhm: float = 500.0
    background_per_pulse: float = 3.65e-7
    num_channels: int = 2
    rng_seed: int = 4

    def __post_init__(self):
        problems = []
        if self.jitter_fwhm <= 0:
            problems.append("jitter_fwhm must be positive")
        if not 0.0 <= self.background_per_pulse < 1.0:
            problems.append("background_per_pulse must lie in [0, 1)")
        if self.num_channels not in (1, 2):
            problems.append("num_channels must be 1 or 2")
        if problems:
            raise ConfigError("; ".join(f"detector.{p}" for p in problems))

    @property
    def jitter_sigma(self) -> float:
        return self.jitter_fwhm / FWHM_PER_SIGMA


class Slot(IntEnum):
    EARLY_SLOT = 0
    CENTRAL_SLOT = 1
    LATE_SLOT = 2


class Port(IntEnum):
    PLUS = 0
    MINUS = 1


@dataclass(frozen=True)
class MeasurementOutcome:
    slot: Slot
    port: Port

    @property
    def code(self) -> int:
        return int(self.slot) * 2 + int(self.port)


OUTCOMES = [MeasurementOutcome(s, p) for s in Slot for p in Port]


def slot_offsets(bin_separation: int) -> np.ndarray:
    """Arrival offset of each Slot relative to the central slot, indexed by Slot value."""
    return np.array([bin_separation, 0, -bin_separation], dtype=np.int64)


@dataclass(frozen=True)
class DetectionEvent:
    timestamp: int
    channel: int
    is_background: bool = False


@dataclass
class DetectionBatch:
    """Column-oriented detections; pulse_index is -1 for background clicks."""

    timestamp: np.ndarray
    channel: np.ndarray
    is_background: np.ndarray
    pulse_index: np.ndarray

    def __len__(self) -> int:
        return len(self.timestamp)

    def events(self) -> List[DetectionEvent]:
        return [DetectionEvent(int(t), int(c), bool(b))
                for t, c, b in zip(self.timestamp, self.channel, self.is_background)]

    def sorted(self) -> "DetectionBatch":
        order = np.argsort(self.timestamp, kind="stable")
        return DetectionBatch(self.timestamp[order], self.channel[order], self.is_background[order],
                              self.pulse_index[order])

    @classmethod
    def concatenate(cls, parts: Sequence["DetectionBatch"]) -> "DetectionBatch":
        if not parts:
            return cls(np.zeros(0, np.int64), np.zeros(0, np.uint8), np.zeros(0, bool), np.zeros(0, np.int64))
        return cls(*(np.concatenate([getattr(p, name) for p in parts])
                     for name in ("timestamp", "channel", "is_background", "pulse_index")))


def outcome_table(amplitudes: np.ndarray, delta_phase, visibility: float) -> np.ndarray:
    """
    Outcome probabilities for amplitude rows (..., 2) and phases broadcast against them.

    Returns:
        Array (..., 6) ordered as OUTCOMES.
    """
    if abs(visibility) > 1.0:
        raise DomainError(f"visibility must satisfy |V| <= 1, got {visibility}")
    alpha, beta = amplitudes[..., 0], amplitudes[..., 1]
    pe, pl = np.abs(alpha) ** 2, np.abs(beta) ** 2
    cross = visibility * np.real(alpha * np.exp(1j * np.asarray(delta_phase)) * np.conj(beta)) / 2.0
    central = (pe + pl) / 4.0
    cross = np.broadcast_to(cross, np.broadcast(central, cross).shape)
    pe, pl, central = (np.broadcast_to(v, cross.shape) for v in (pe, pl, central))
    return np.stack([pe / 4, pe / 4, central + cross, central - cross, pl / 4, pl / 4], axis=-1)


def measurement_probabilities(state: TimeBinState, delta_phase: float, V: float) -> Dict[MeasurementOutcome, Probability]:
    """
    Probabilities of the six decoder outcomes for a time-bin state.

    The side slots carry no interference: EarlySlot gets |alpha|^2 / 2 and
    LateSlot |beta|^2 / 2, each split evenly over the two ports. The central slot
    gives |alpha e^{i dphi} +- beta|^2 / 4 with the cross term scaled by V.

    Raises:
        DomainError: If |V| > 1.
    """
    probs = outcome_table(STATE_AMPLITUDES[int(state)], delta_phase, V)
    return {outcome: float(p) for outcome, p in zip(OUTCOMES, probs)}


def _effective_states(state: np.ndarray, flipped: np.ndarray) -> np.ndarray:
    return np.where(flipped, state ^ 1, state)


def detect_chunk(pulses: PulseTrain, survivors: np.ndarray, decoder: DecoderConfig, detector: DetectorConfig,
                 rng: np.random.Generator, delay: int = 0,
                 decoder_phase: Optional[np.ndarray] = None) -> DetectionBatch:
    """
    Photon detections for a batch of pulses (vectorized detect_pulse).

    Each surviving photon passes the decoder throughput, draws an outcome and
    becomes a click at emission_time + delay + slot offset + jitter. Background
    clicks are drawn per pulse slot and spread uniformly over the period.

    Args:
        pulses: Pulses of one chunk.
        survivors: Photons per pulse that survived the channel.
        decoder: Decoder configuration.
        detector: Detector configuration.
        rng: Random generator for this chunk.
        delay: Central-slot arrival delay in ps.
        decoder_phase: Per-pulse decoder phase; defaults to decoder.phase_B.
    """
    passed = rng.binomial(np.asarray(survivors, dtype=np.int64), decoder.throughput)
    hit = np.flatnonzero(passed)
    photon_pulse = np.repeat(hit, passed[hit])
    phase = decoder.phase_B if decoder_phase is None else np.asarray(decoder_phase)[photon_pulse]
    states = _effective_states(pulses.state[photon_pulse], pulses.flipped[photon_pulse])
    probs = outcome_table(STATE_AMPLITUDES[states], phase, decoder.visibility)
    cumulative = np.cumsum(probs, axis=-1)
    u = rng.random(len(photon_pulse))
    outcome = np.minimum((u[:, None] >= cumulative).sum(axis=1), 5)
    slot, port = outcome // 2, outcome % 2
    jitter = np.rint(rng.normal(0.0, detector.jitter_sigma, size=len(photon_pulse))).astype(np.int64)
    timestamp = (pulses.emission_time[photon_pulse] + delay
                 + slot_offsets(decoder.bin_separation)[slot] + jitter)
    signal = DetectionBatch(timestamp, port.astype(np.uint8), np.zeros(len(photon_pulse), bool),
                            pulses.index[photon_pulse])

    n_bg = rng.binomial(len(pulses), detector.background_per_pulse) if len(pulses) else 0
    bg_slot = rng.integers(0, len(pulses), size=n_bg) if n_bg else np.zeros(0, np.int64)
    period = pulses.config.period
    spread = np.floor(rng.random(n_bg) * float(period)).astype(np.int64)
    bg_time = pulses.emission_time[bg_slot] + delay - int(period / 2) + spread
    bg_channel = rng.integers(0, 2, size=n_bg).astype(np.uint8)
    background = DetectionBatch(bg_time, bg_channel, np.ones(n_bg, bool), np.full(n_bg, -1, np.int64))

    batch = DetectionBatch.concatenate([signal, background])
    if detector.num_channels == 1:
        keep = batch.channel == 0
        batch = DetectionBatch(batch.timestamp[keep], batch.channel[keep], batch.is_background[keep],
                               batch.pulse_index[keep])
    return batch


def detect_pulse(pulse: PulseRecord, surviving_photons: int, decoder: DecoderConfig, detector: DetectorConfig,
                 rng: np.random.Generator, source: Optional[SourceConfig] = None, delay: int = 0,
                 decoder_phase: Optional[float] = None) -> List[DetectionEvent]:
    """Detections produced by a single pulse; see detect_chunk for the model."""
    source = source or SourceConfig()
    train = PulseTrain(source, np.array([pulse.index], np.int64), np.array([pulse.emission_time], np.int64),
                       np.array([int(pulse.state)], np.uint8), np.array([int(pulse.intensity.kind)], np.uint8),
                       np.array([pulse.photon_count], np.uint16))
    phase = None if decoder_phase is None else np.array([decoder_phase])
    return detect_chunk(train, np.array([surviving_photons]), decoder, detector, rng, delay, phase).sorted().events()


def phase_drift(decoder: DecoderConfig, duration: float, step: float = 0.01,
                rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Decoder phase drift sampled every `step` seconds.

    A Wiener process with decoder.phase_drift_rms per sqrt(s), reset to zero at
    every multiple of rezero_interval, when the decoder phase is re-optimized.
    """
    n = max(1, int(math.ceil(duration / step)) + 1)
    if decoder.phase_drift_rms == 0:
        return np.zeros(n)
    rng = rng or np.random.default_rng(np.random.SeedSequence(decoder.rng_seed, spawn_key=(0xD1F7,)))
    increments = rng.normal(0.0, decoder.phase_drift_rms * math.sqrt(step), size=n)
    segment = np.floor(np.arange(n) * step / decoder.rezero_interval + 1e-9).astype(np.int64)
    walk = np.cumsum(increments)
    starts = np.flatnonzero(np.r_[True, segment[1:] != segment[:-1]])
    walk -= np.repeat(walk[starts], np.diff(np.r_[starts, n]))
    return walk


def drift_at(drift: np.ndarray, times_ps: np.ndarray, step: float = 0.01) -> np.ndarray:
    k = np.asarray(times_ps) // int(round(step * PS_PER_SECOND))
    return drift[np.clip(k, 0, len(drift) - 1)]


def optimize_phase(qber_estimator: Callable[[float], float], search_grid: Sequence[float]) -> float:
    """
    Grid phase that minimizes the estimated phase-basis QBER.

    Ties go to the smallest phase value.

    Raises:
        DomainError: If the grid is empty.
    """
    grid = np.sort(np.asarray(list(search_grid), dtype=float))
    if grid.size == 0:
        raise DomainError("phase search grid is empty")
    scores = np.array([qber_estimator(float(phase)) for phase in grid])
    return float(grid[int(np.argmin(scores))])


def expected_qber(source: SourceConfig, decoder: DecoderConfig, detector: DetectorConfig,
                  channel_transmittance: float, window: int) -> Probability:
    """
    Mean sifted QBER predicted for a configuration, averaged over the drift cycle.

    Signal errors come from source flips and the central-slot contrast
    V cos(phase_B) <cos drift>; background clicks landing in a sifted window are
    random. Both intensity classes count, vacuum pulses do not.
    """
    e_s = source.intrinsic_error
    drift_var = decoder.phase_drift_rms ** 2
    if drift_var > 0:
        x = drift_var * decoder.rezero_interval / 2.0
        drift_factor = (1.0 - math.exp(-x)) / x
    else:
        drift_factor = 1.0
    contrast = decoder.visibility * math.cos(decoder.phase_B) * drift_factor
    x_err = (1.0 - contrast) / 2.0
    signal_err = e_s + x_err * (1.0 - 2.0 * e_s) / 2.0

    p, mu = source.class_proportions, source.mean_photon_table
    emitted = p[0] + p[1]
    if emitted == 0:
        return 0.5
    eta = channel_transmittance * decoder.throughput
    detect = (p[0] * (1 - math.exp(-eta * mu[0])) + p[1] * (1 - math.exp(-eta * mu[1]))) / emitted
    signal_sifted = detect / 2.0
    background_sifted = 1.5 * detector.background_per_pulse * window / float(source.period)
    total = signal_sifted + background_sifted
    if total == 0:
        return 0.5
    return (signal_sifted * signal_err + background_sifted * 0.5) / total


def calibrate_misalignment(target_qber: float, source: SourceConfig, decoder: DecoderConfig,
                           detector: DetectorConfig, channel_transmittance: float, window: int) -> float:
    """
    Static decoder phase misalignment that makes expected_qber hit a target.

    Returns:
        phase_B in [0, pi/2].

    Raises:
        DomainError: If the target lies outside what the other error sources allow.
    """
    def gap(phase):
        trial = replace(decoder, phase_B=phase)
        return expected_qber(source, trial, detector, channel_transmittance, window) - target_qber

    low, high = gap(0.0), gap(math.pi / 2)
    if low > 0 or high < 0:
        raise DomainError(f"target QBER {target_qber} is outside the reachable range "
                          f"[{low + target_qber:.4f}, {high + target_qber:.4f}]")
    phase = optimize.brentq(gap, 0.0, math.pi / 2, xtol=1e-12)
    logger.info(f"Calibrated decoder misalignment: phase_B = {phase:.4f} rad for QBER {target_qber:.4f}")
    return float(phase)
