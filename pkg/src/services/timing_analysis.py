"""
Time-correlation analysis of emission and detection time tags.

Builds coincidence histograms, finds the per-second channel delay, classifies
detections into early/central/late coincidences, applies the count-rate filter
and sifts the key. All timestamps are integer picoseconds and every routine
expects its timestamp inputs sorted.
"""
import logging
from fractions import Fraction
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from ..errors import ConfigError, DomainError
from .qkd_core import PS_PER_SECOND, STATE_BASIS, STATE_BIT, Basis, Probability, emission_times, pulse_index_at
from .receiver_model import FWHM_PER_SIGMA, Slot, slot_offsets

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoincidenceConfig:
    """
    Coincidence analysis parameters (ps unless noted).

    aggregation is in seconds, snr_threshold in Hz. The delay scan covers
    time_of_flight +- delay_search_range (at most half a pulse period once
    the period is known) on a bin_width grid, refined in fine_step steps.
    """

    window: int = 1000
    slot_offset: int = 2000
    time_of_flight: int = 4_000_000
    aggregation: float = 1.0
    snr_threshold: float = 500.0
    bin_width: int = 100
    fine_step: int = 10
    delay_search_range: int = 100_000
    histogram_range: int = 20_000

    def __post_init__(self):
        problems = []
        if self.window <= 0:
            problems.append("window must be positive")
        if self.slot_offset <= self.window / 2:
            problems.append("slot_offset must exceed window / 2")
        if self.aggregation <= 0:
            problems.append("aggregation must be positive")
        if self.bin_width <= 0 or self.fine_step <= 0:
            problems.append("bin_width and fine_step must be positive")
        if self.delay_search_range < 0 or self.histogram_range <= 0:
            problems.append("search and histogram ranges must be positive")
        if problems:
            raise ConfigError("; ".join(f"coincidence.{p}" for p in problems))

    @property
    def window_low(self) -> int:
        """Offset of the half-open window [center + window_low, center + window_low + window)."""
        return -(self.window // 2)

    def search_half_range(self, period: Optional[Fraction] = None) -> int:
        """delay_search_range, capped at half a pulse period when the period is known."""
        if period is None:
            return self.delay_search_range
        return min(self.delay_search_range, int(period // 2))


@dataclass
class TimingHistogram:
    bin_width: int
    offsets: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def rows(self) -> List[Tuple[int, int]]:
        return [(int(o), int(c)) for o, c in zip(self.offsets, self.counts)]


@dataclass(frozen=True)
class DelayResult:
    """Optimized delay in ps, or None when no coincidences were found."""

    delay: Optional[int]
    coincidences: int


@dataclass
class EmissionBlock:
    """Emissions considered for one aggregation window, sorted by time."""

    index: np.ndarray
    time: np.ndarray
    state: np.ndarray
    intensity: np.ndarray

    def __len__(self) -> int:
        return len(self.index)

    def select(self, mask) -> "EmissionBlock":
        return EmissionBlock(self.index[mask], self.time[mask], self.state[mask], self.intensity[mask])

    def phase_basis(self) -> "EmissionBlock":
        return self.select(STATE_BASIS[self.state] == Basis.PHASE)


@dataclass
class ClassifiedEvents:
    """Detections matched to an emission and a slot, plus the unmatched tally."""

    timestamp: np.ndarray
    port: np.ndarray
    slot: np.ndarray
    pulse_index: np.ndarray
    state: np.ndarray
    intensity: np.ndarray
    unmatched: int

    def __len__(self) -> int:
        return len(self.timestamp)

    def slot_counts(self) -> Dict[Slot, int]:
        return {s: int(np.count_nonzero(self.slot == s)) for s in Slot}


@dataclass
class SiftedKeyPair:
    """Aligned sifted bits of both parties with per-bit labels."""

    transmitter_bits: np.ndarray
    receiver_bits: np.ndarray
    basis_labels: np.ndarray
    intensity_labels: np.ndarray
    pulse_index: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        if len(self.transmitter_bits) != len(self.receiver_bits):
            raise DomainError("sifted keys must have equal length")

    def __len__(self) -> int:
        return len(self.transmitter_bits)

    @property
    def errors(self) -> int:
        return int(np.count_nonzero(self.transmitter_bits != self.receiver_bits))

    @property
    def qber(self) -> Optional[Probability]:
        return self.errors / len(self) if len(self) else None

    def select(self, mask) -> "SiftedKeyPair":
        return SiftedKeyPair(self.transmitter_bits[mask], self.receiver_bits[mask], self.basis_labels[mask],
                             self.intensity_labels[mask], self.pulse_index[mask], self.second[mask])

    @classmethod
    def concatenate(cls, parts: Sequence["SiftedKeyPair"]) -> "SiftedKeyPair":
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, name) for p in parts]) for name in
                     ("transmitter_bits", "receiver_bits", "basis_labels", "intensity_labels",
                      "pulse_index", "second")))

    @classmethod
    def empty(cls) -> "SiftedKeyPair":
        return cls(np.zeros(0, np.uint8), np.zeros(0, np.uint8), np.zeros(0, np.uint8), np.zeros(0, np.uint8),
                   np.zeros(0, np.int64), np.zeros(0, np.int64))


@dataclass(frozen=True)
class PerSecondStats:
    second_index: int
    delay: Optional[int]
    counts_total: float
    sifted_time: int = 0
    errors_time: int = 0
    sifted_phase: int = 0
    errors_phase: int = 0
    retained: bool = True

    @property
    def sifted(self) -> int:
        return self.sifted_time + self.sifted_phase

    @property
    def errors(self) -> int:
        return self.errors_time + self.errors_phase

    @property
    def qber_time(self) -> Optional[Probability]:
        """Error fraction over both sifted bases; None without sifted bits."""
        return self.errors / self.sifted if self.sifted else None


@dataclass
class SiftResult:
    key_pair: SiftedKeyPair
    per_second: Dict[int, Tuple[int, int, int, int]]
    mean_qber: Optional[Probability]


def check_sorted(values: np.ndarray, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    if values.size > 1 and np.any(np.diff(values) < 0):
        raise DomainError(f"{name} must be sorted in time")
    return values


def pair_offsets(emissions: np.ndarray, detections: np.ndarray, low: int, high: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    All (detection, emission) pairs with low <= detection - emission < high.

    Each detection's partner range is located by binary search on the sorted
    emissions, so the cost grows with the number of pairs, not N * M.

    Returns:
        (detection positions, emission positions, offsets).
    """
    start = np.searchsorted(emissions, detections - high, side="right")
    stop = np.searchsorted(emissions, detections - low, side="right")
    counts = stop - start
    total = int(counts.sum())
    det_pos = np.repeat(np.arange(len(detections)), counts)
    group_start = np.repeat(np.cumsum(counts) - counts, counts)
    em_pos = np.repeat(start, counts) + (np.arange(total) - group_start)
    return det_pos, em_pos, detections[det_pos] - emissions[em_pos]


def build_histogram(emissions: np.ndarray, detections: np.ndarray, offset_range: Tuple[int, int],
                    bin_width: int, time_of_flight: int = 0) -> TimingHistogram:
    """
    Coincidence counts versus detection - emission - time_of_flight.

    Args:
        emissions: Sorted emission timestamps (ps).
        detections: Sorted detection timestamps (ps).
        offset_range: Half-open (low, high) offset range in ps.
        bin_width: Bin width in ps.
        time_of_flight: Nominal propagation delay subtracted from every offset.

    Raises:
        DomainError: On unsorted input or a non-positive bin width.
    """
    if bin_width <= 0:
        raise DomainError("bin_width must be positive")
    emissions = check_sorted(emissions, "emissions")
    detections = check_sorted(detections, "detections")
    low, high = offset_range
    n_bins = max(0, -(-(high - low) // bin_width))
    high = low + n_bins * bin_width
    _, _, offsets = pair_offsets(emissions, detections, low + time_of_flight, high + time_of_flight)
    bins = (offsets - time_of_flight - low) // bin_width
    counts = np.bincount(bins, minlength=n_bins)[:n_bins]
    return TimingHistogram(bin_width, low + bin_width * np.arange(n_bins, dtype=np.int64), counts)


def _window_counts(sorted_offsets: np.ndarray, candidates: np.ndarray, config: CoincidenceConfig) -> np.ndarray:
    lower = candidates + config.window_low
    return (np.searchsorted(sorted_offsets, lower + config.window, side="left")
            - np.searchsorted(sorted_offsets, lower, side="left"))


def _scan(sorted_offsets: np.ndarray, low: int, high: int, config: CoincidenceConfig) -> Tuple[int, int]:
    """
    Best window center in [low, high].

    A coarse scan on the bin_width grid picks the window holding the most
    offsets (ties go to the smallest center). The fine_step grid within half a
    window of it is then scanned, and the center of the run of near-maximal
    counts around its argmax (within one Poisson standard deviation of the
    maximum) is returned.
    """
    coarse = np.arange(low, high + 1, config.bin_width, dtype=np.int64)
    counts = _window_counts(sorted_offsets, coarse, config)
    best = int(coarse[int(np.argmax(counts))])
    reach = max(config.window // 2, config.bin_width)
    fine = np.arange(max(low, best - reach), min(high, best + reach) + 1, config.fine_step, dtype=np.int64)
    counts = _window_counts(sorted_offsets, fine, config)
    peak = int(np.argmax(counts))
    near = counts >= counts[peak] - np.sqrt(counts[peak])
    first, last = peak, peak
    while first > 0 and near[first - 1]:
        first -= 1
    while last < len(fine) - 1 and near[last + 1]:
        last += 1
    center = int(round((int(fine[first]) + int(fine[last])) / 2 / config.fine_step)) * config.fine_step
    center = min(max(center, low), high)
    return center, int(_window_counts(sorted_offsets, np.array([center]), config)[0])


def optimize_delay(emissions: np.ndarray, detections: np.ndarray, config: CoincidenceConfig,
                   period: Optional[Fraction] = None) -> DelayResult:
    """
    Delay that maximizes coincidences between emissions and detections in the central window.

    Pass phase-basis emissions to reproduce the superposition-basis delay
    criterion. The scan covers time_of_flight +- delay_search_range, narrowed
    to half a pulse period when the period is given.

    Returns:
        DelayResult; delay is None when there is nothing to correlate.
    """
    emissions = check_sorted(emissions, "emissions")
    detections = check_sorted(detections, "detections")
    if len(emissions) == 0 or len(detections) == 0:
        return DelayResult(None, 0)
    half_range = config.search_half_range(period)
    reach = half_range + config.window
    _, _, offsets = pair_offsets(emissions, detections, config.time_of_flight - reach,
                                 config.time_of_flight + reach)
    if offsets.size == 0:
        return DelayResult(None, 0)
    offsets = np.sort(offsets - config.time_of_flight)
    delta, count = _scan(offsets, -half_range, half_range, config)
    if count == 0:
        return DelayResult(None, 0)
    return DelayResult(config.time_of_flight + delta, count)


def fold_detections(detections: np.ndarray, period: Fraction, time_of_flight: int) -> np.ndarray:
    """Residual of each detection, less time_of_flight, against the nearest slot of the public pulse grid."""
    shifted = np.asarray(detections, dtype=np.int64) - time_of_flight
    return shifted - emission_times(pulse_index_at(shifted, period), period)


def optimize_folded_delay(detections: np.ndarray, period: Fraction, config: CoincidenceConfig) -> DelayResult:
    """
    Delay search that needs no knowledge of the transmitted bases.

    Detections are folded onto the public pulse grid and the central slot is
    found as the densest window within half a period of the nominal time of
    flight (the central slot collects half of all clicks, each side slot a quarter).
    """
    detections = check_sorted(detections, "detections")
    if len(detections) == 0:
        return DelayResult(None, 0)
    residual = fold_detections(detections, period, config.time_of_flight)
    span = int(round(period))
    wrapped = np.sort(np.concatenate([residual - span, residual, residual + span]))
    half = span // 2
    delta, count = _scan(wrapped, -half, half, config)
    if count == 0:
        return DelayResult(None, 0)
    return DelayResult(config.time_of_flight + delta, count)


def classify_events(emissions: EmissionBlock, detections: np.ndarray, channels: np.ndarray, delay: int,
                    config: CoincidenceConfig) -> ClassifiedEvents:
    """
    Match detections to emissions and tag the slot.

    A detection belongs to slot s of emission e when it falls in the half-open
    window [c - window/2, c + window/2) around c = e + delay + offset(s), with
    Early at +slot_offset, Central at 0 and Late at -slot_offset. Several
    candidates resolve to the nearest center; detections with none are dropped
    and counted as unmatched.
    """
    times = check_sorted(emissions.time, "emissions")
    detections = check_sorted(detections, "detections")
    n = len(detections)
    best_slot = np.full(n, -1, dtype=np.int64)
    best_pos = np.full(n, -1, dtype=np.int64)
    best_dist = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    offsets = slot_offsets(config.slot_offset)
    if len(times) and n:
        for slot in (Slot.CENTRAL_SLOT, Slot.EARLY_SLOT, Slot.LATE_SLOT):
            target = detections - delay - offsets[slot]
            right = np.searchsorted(times, target, side="left")
            for pos in (right - 1, right):
                valid = (pos >= 0) & (pos < len(times))
                safe = np.clip(pos, 0, len(times) - 1)
                residual = target - times[safe]
                inside = valid & (residual >= config.window_low) & (residual < config.window_low + config.window)
                better = inside & (np.abs(residual) < best_dist)
                best_slot[better] = slot
                best_pos[better] = safe[better]
                best_dist[better] = np.abs(residual[better])
    matched = best_slot >= 0
    pos = best_pos[matched]
    return ClassifiedEvents(
        timestamp=detections[matched],
        port=np.asarray(channels)[matched].astype(np.uint8),
        slot=best_slot[matched].astype(np.uint8),
        pulse_index=emissions.index[pos],
        state=emissions.state[pos],
        intensity=emissions.intensity[pos],
        unmatched=int(n - matched.sum()),
    )


@dataclass
class GridDetections:
    """
    Receiver-side view of classified detections: pulse index and slot from the
    public pulse grid, no knowledge of what was sent. One click per pulse.
    """

    timestamp: np.ndarray
    port: np.ndarray
    slot: np.ndarray
    pulse_index: np.ndarray
    unmatched: int

    def __len__(self) -> int:
        return len(self.timestamp)

    @property
    def measured_basis(self) -> np.ndarray:
        return np.where(self.slot == Slot.CENTRAL_SLOT, Basis.PHASE, Basis.TIME).astype(np.uint8)

    @property
    def measured_bits(self) -> np.ndarray:
        return np.where(self.slot == Slot.CENTRAL_SLOT, self.port,
                        (self.slot == Slot.LATE_SLOT).astype(np.uint8)).astype(np.uint8)


def classify_on_grid(detections: np.ndarray, channels: np.ndarray, delay: int, period: Fraction,
                     config: CoincidenceConfig) -> GridDetections:
    """
    Assign detections to pulse slots of the public grid, as classify_events
    does against emissions. When several clicks fall on one pulse the earliest
    is kept.
    """
    detections = check_sorted(detections, "detections")
    n = len(detections)
    best_slot = np.full(n, -1, dtype=np.int64)
    best_index = np.zeros(n, dtype=np.int64)
    best_dist = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    offsets = slot_offsets(config.slot_offset)
    for slot in (Slot.CENTRAL_SLOT, Slot.EARLY_SLOT, Slot.LATE_SLOT):
        target = detections - delay - offsets[slot]
        index = pulse_index_at(target, period)
        residual = target - emission_times(index, period)
        inside = (index >= 0) & (residual >= config.window_low) & (residual < config.window_low + config.window)
        better = inside & (np.abs(residual) < best_dist)
        best_slot[better] = slot
        best_index[better] = index[better]
        best_dist[better] = np.abs(residual[better])
    matched = np.flatnonzero(best_slot >= 0)
    _, first = np.unique(best_index[matched], return_index=True)
    keep = matched[np.sort(first)]
    return GridDetections(
        timestamp=detections[keep],
        port=np.asarray(channels)[keep].astype(np.uint8),
        slot=best_slot[keep].astype(np.uint8),
        pulse_index=best_index[keep],
        unmatched=int(n - len(matched)),
    )


def snr_filter(stats: Sequence[PerSecondStats], threshold: float) -> List[PerSecondStats]:
    """Mark seconds with counts_total >= threshold (and a valid delay) as retained."""
    return [replace(s, retained=bool(s.counts_total >= threshold and s.delay is not None)) for s in stats]


def sift(classified: ClassifiedEvents, aggregation: float = 1.0) -> SiftedKeyPair:
    """
    Basis-sift classified detections.

    Time-basis pulses keep Early (bit 0) and Late (bit 1) slot clicks; phase-basis
    pulses keep central-slot clicks with the port as the bit. When one pulse
    yields several sifted clicks the earliest is kept.
    """
    basis = STATE_BASIS[classified.state]
    time_ok = (basis == Basis.TIME) & (classified.slot != Slot.CENTRAL_SLOT)
    phase_ok = (basis == Basis.PHASE) & (classified.slot == Slot.CENTRAL_SLOT)
    keep = np.flatnonzero(time_ok | phase_ok)
    _, first = np.unique(classified.pulse_index[keep], return_index=True)
    keep = keep[first]
    rx_bits = np.where(basis[keep] == Basis.TIME, (classified.slot[keep] == Slot.LATE_SLOT).astype(np.uint8),
                       classified.port[keep]).astype(np.uint8)
    second = (classified.timestamp[keep] // int(round(aggregation * PS_PER_SECOND))).astype(np.int64)
    return SiftedKeyPair(STATE_BIT[classified.state[keep]].astype(np.uint8), rx_bits, basis[keep].astype(np.uint8),
                         classified.intensity[keep].astype(np.uint8), classified.pulse_index[keep], second)


def sift_and_qber(classified: ClassifiedEvents, aggregation: float = 1.0,
                  retained_seconds: Optional[Sequence[int]] = None) -> SiftResult:
    """
    Sift and estimate the QBER per aggregation window and on average.

    Returns:
        SiftResult with per-second (sifted_time, errors_time, sifted_phase,
        errors_phase) tuples and the mean QBER over seconds that have sifted bits
        (restricted to retained_seconds when given).
    """
    pair = sift(classified, aggregation)
    per_second: Dict[int, Tuple[int, int, int, int]] = {}
    wrong = pair.transmitter_bits != pair.receiver_bits
    for second in np.unique(pair.second):
        in_second = pair.second == second
        t = in_second & (pair.basis_labels == Basis.TIME)
        p = in_second & (pair.basis_labels == Basis.PHASE)
        per_second[int(second)] = (int(t.sum()), int((t & wrong).sum()), int(p.sum()), int((p & wrong).sum()))
    allowed = per_second.keys() if retained_seconds is None else set(retained_seconds) & per_second.keys()
    qbers = [(v[1] + v[3]) / (v[0] + v[2]) for s, v in per_second.items() if s in allowed and v[0] + v[2]]
    return SiftResult(pair, per_second, float(np.mean(qbers)) if qbers else None)


def mean_qber(stats: Sequence[PerSecondStats]) -> Optional[Probability]:
    """Mean per-second QBER over retained seconds; seconds without sifted bits are skipped."""
    values = [s.qber_time for s in stats if s.retained and s.qber_time is not None]
    return float(np.mean(values)) if values else None


def _gaussian(x, amplitude, center, sigma, floor):
    return amplitude * np.exp(-0.5 * ((x - center) / sigma) ** 2) + floor


def fit_peak_fwhm(histogram: TimingHistogram, center: int, half_width: int = 1500) -> float:
    """
    FWHM in ps of a Gaussian (plus constant floor) fitted to one histogram peak.

    Raises:
        DomainError: If the peak region is empty or the fit fails.
    """
    mid = histogram.offsets + histogram.bin_width / 2.0
    region = np.abs(mid - center) <= half_width
    x, y = mid[region], histogram.counts[region].astype(float)
    if y.sum() <= 0:
        raise DomainError("no counts around the requested peak")
    guess = (y.max(), float(center), half_width / 4.0, float(y.min()))
    try:
        params, _ = optimize.curve_fit(_gaussian, x, y, p0=guess, maxfev=10000)
    except RuntimeError as e:
        raise DomainError(f"peak fit failed: {e}")
    return float(abs(params[2]) * FWHM_PER_SIGMA)
