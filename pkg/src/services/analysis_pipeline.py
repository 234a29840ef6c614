"""
Offline analysis of a run: per-second delay search, classification, count-rate
filter, sifting and QBER, the timing histogram, and the optional turbulence and
polarization series merged into one per-second report.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import FileFormatError
from ..store.timetag_store import read_timetags, tags_to_detections, tags_to_emissions
from .atmos_characterization import FriedEstimate, r0_series
from .polarization_tomography import SixStateCounts, reconstruct_series
from .qkd_core import PS_PER_SECOND, emission_times, pulse_index_at
from .receiver_model import DetectionBatch
from .simulation import CENTROID_FILE, RX_FILE, SOURCE_SIDECAR, TOMOGRAPHY_FILE, TX_FILE, read_source_sidecar
from .source_model import CHUNK_SIZE, IntensityKind, SourceConfig, lookup_pulses, pulse_chunk
from .timing_analysis import (
    EmissionBlock,
    PerSecondStats,
    SiftedKeyPair,
    TimingHistogram,
    build_histogram,
    classify_events,
    mean_qber,
    optimize_delay,
    sift,
    snr_filter,
)

logger = logging.getLogger(__name__)


def near_anchors(times: np.ndarray, anchors: np.ndarray, reach: int) -> np.ndarray:
    """Mask of times within reach of at least one of the sorted anchors."""
    if len(anchors) == 0:
        return np.zeros(len(times), dtype=bool)
    pos = np.searchsorted(anchors, times - reach, side="left")
    return (pos < len(anchors)) & (anchors[np.minimum(pos, len(anchors) - 1)] <= times + reach)


class EmissionTable:
    """Transmitter emissions read from its time-tag file."""

    def __init__(self, block: EmissionBlock):
        self.block = block
        order = np.argsort(block.index, kind="stable")
        self._sorted_index = block.index[order]
        self._order = order

    def window(self, start_ps: int, stop_ps: int, anchors: Optional[np.ndarray] = None,
               reach: int = 0) -> EmissionBlock:
        """Emissions in [start_ps, stop_ps), restricted to those within reach of the anchors when given."""
        lo, hi = np.searchsorted(self.block.time, [start_ps, stop_ps], side="left")
        block = self.block.select(slice(lo, hi))
        return block if anchors is None else block.select(near_anchors(block.time, anchors, reach))

    def lookup(self, indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(state, intensity, emitted) for pulse indices; pulses absent from the file were not emitted."""
        indices = np.asarray(indices, dtype=np.int64)
        pos = np.searchsorted(self._sorted_index, indices)
        safe = np.clip(pos, 0, max(len(self._sorted_index) - 1, 0))
        if len(self._sorted_index) == 0:
            none = np.zeros(len(indices), dtype=np.int64)
            return none, np.full(len(indices), IntensityKind.VACUUM, dtype=np.int64), np.zeros(len(indices), bool)
        found = self._sorted_index[safe] == indices
        rows = self._order[safe]
        state = np.where(found, self.block.state[rows], 0).astype(np.int64)
        intensity = np.where(found, self.block.intensity[rows], IntensityKind.VACUUM).astype(np.int64)
        return state, intensity, found

    @property
    def last_time(self) -> Optional[int]:
        return int(self.block.time[-1]) if len(self.block) else None


class SourceReplay:
    """
    Transmitter emissions regenerated from the source settings and seed.

    A window is regenerated one chunk of CHUNK_SIZE pulses at a time; chunks
    with no anchor in reach are skipped and the others are filtered before
    they are kept, so memory follows the detections rather than the pulse rate.
    """

    def __init__(self, source: SourceConfig):
        self.source = source

    def window(self, start_ps: int, stop_ps: int, anchors: Optional[np.ndarray] = None,
               reach: int = 0) -> EmissionBlock:
        period = self.source.period
        first = max(int(pulse_index_at(np.array([max(start_ps, 0)]), period)[0]) - 1, 0)
        last = int(pulse_index_at(np.array([max(stop_ps, 0)]), period)[0]) + 1
        parts = []
        for c in range(first // CHUNK_SIZE, (last - 1) // CHUNK_SIZE + 1):
            if anchors is not None:
                lo, hi = emission_times(np.array([c * CHUNK_SIZE, (c + 1) * CHUNK_SIZE - 1]), period)
                if np.searchsorted(anchors, lo - reach) == np.searchsorted(anchors, hi + reach, side="right"):
                    continue
            events = pulse_chunk(self.source, c).emission_events()
            keep = (events.emission_time >= start_ps) & (events.emission_time < stop_ps)
            if anchors is not None:
                keep &= near_anchors(events.emission_time, anchors, reach)
            parts.append(events.select(keep))
        if not parts:
            return EmissionBlock(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64),
                                 np.zeros(0, np.int64))
        return EmissionBlock(np.concatenate([p.index for p in parts]),
                             np.concatenate([p.emission_time for p in parts]),
                             np.concatenate([p.state for p in parts]).astype(np.int64),
                             np.concatenate([p.intensity for p in parts]).astype(np.int64))

    def lookup(self, indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        indices = np.asarray(indices, dtype=np.int64)
        valid = indices >= 0
        pulses = lookup_pulses(self.source, np.where(valid, indices, 0))
        emitted = valid & (pulses.intensity != IntensityKind.VACUUM)
        return pulses.state.astype(np.int64), pulses.intensity.astype(np.int64), emitted

    @property
    def last_time(self) -> Optional[int]:
        return None


@dataclass
class AnalysisReport:
    stats: List[PerSecondStats]
    key_pair: SiftedKeyPair
    histogram: TimingHistogram
    mean_qber: Optional[float]
    e_nu: Optional[float]
    fried: List[FriedEstimate] = field(default_factory=list)
    tomography: List[dict] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        """True when no second survived the filter, so the mean QBER is undefined."""
        return self.mean_qber is None

    @property
    def retained_seconds(self) -> List[int]:
        return [s.second_index for s in self.stats if s.retained]

    def signal_key(self) -> SiftedKeyPair:
        return self.key_pair.select(self.key_pair.intensity_labels == IntensityKind.SIGNAL)

    def rows(self) -> List[Tuple]:
        """Per-second rows: second, r0, qber_time, qber_pol, retained."""
        r0 = {f.second_index: f.r0 for f in self.fried}
        pol = {t["second"]: t["qber_pol"] for t in self.tomography}
        return [(s.second_index, r0.get(s.second_index), s.qber_time, pol.get(s.second_index), s.retained)
                for s in self.stats]


def _second_count(detections: DetectionBatch, agg_ps: int, emissions) -> int:
    last = int(detections.timestamp[-1]) if len(detections) else None
    if emissions.last_time is not None:
        last = emissions.last_time if last is None else max(last, emissions.last_time)
    return 0 if last is None else last // agg_ps + 1


def analyze(config, emissions, detections: DetectionBatch, centroids=None,
            counts: Optional[Sequence[SixStateCounts]] = None) -> AnalysisReport:
    """
    Analyze one run.

    Args:
        config: A RunConfig.
        emissions: An EmissionTable or SourceReplay.
        detections: Receiver detections sorted by time.
        centroids: Optional centroid samples for the r0 column.
        counts: Optional six-state counts for the qber_pol column.

    Returns:
        AnalysisReport; the key pair holds the sifted bits of retained seconds.
    """
    coin = config.coincidence
    agg_ps = int(round(coin.aggregation * PS_PER_SECOND))
    n_seconds = _second_count(detections, agg_ps, emissions)
    bounds = np.searchsorted(detections.timestamp, np.arange(n_seconds + 1, dtype=np.int64) * agg_ps)
    period = config.source.period
    half_range = coin.search_half_range(period)
    margin = half_range + coin.slot_offset + coin.window
    reach = max(margin, coin.histogram_range + half_range)
    histogram_counts = None
    histogram = build_histogram(np.zeros(0, np.int64), np.zeros(0, np.int64),
                                (-coin.histogram_range, coin.histogram_range), coin.bin_width)
    stats, pairs = [], []
    for s in range(n_seconds):
        lo, hi = bounds[s], bounds[s + 1]
        ts, ch = detections.timestamp[lo:hi], detections.channel[lo:hi]
        start, stop = s * agg_ps, (s + 1) * agg_ps
        em = emissions.window(start - coin.time_of_flight - margin, stop - coin.time_of_flight + margin,
                              anchors=ts - coin.time_of_flight, reach=reach)
        phase_em = em.phase_basis()
        delay = optimize_delay(phase_em.time, ts, coin, period).delay
        counts_total = (hi - lo) / coin.aggregation
        if delay is None:
            stats.append(PerSecondStats(s, None, counts_total, retained=False))
            continue
        pair = sift(classify_events(em, ts, ch, delay, coin), coin.aggregation)
        pairs.append(pair)
        t, p = pair.basis_labels == 0, pair.basis_labels == 1
        wrong = pair.transmitter_bits != pair.receiver_bits
        stats.append(PerSecondStats(s, delay, counts_total, int(t.sum()), int((t & wrong).sum()),
                                    int(p.sum()), int((p & wrong).sum())))
        h = build_histogram(phase_em.time, ts, (-coin.histogram_range, coin.histogram_range), coin.bin_width,
                            time_of_flight=delay)
        histogram_counts = h.counts if histogram_counts is None else histogram_counts + h.counts
        histogram = TimingHistogram(h.bin_width, h.offsets, histogram_counts)

    stats = snr_filter(stats, coin.snr_threshold)
    retained = {s.second_index for s in stats if s.retained}
    all_pairs = SiftedKeyPair.concatenate(pairs)
    key_pair = all_pairs.select(np.isin(all_pairs.second, list(retained)))
    decoy = key_pair.select(key_pair.intensity_labels == IntensityKind.DECOY)
    report = AnalysisReport(stats, key_pair, histogram, mean_qber(stats), decoy.qber)
    logger.info(f"Analyzed {n_seconds} s: {len(retained)} retained, {len(key_pair)} sifted bits, "
                f"mean QBER {report.mean_qber}")
    if report.flagged:
        logger.warning("No second passed the count-rate filter: mean QBER undefined")

    if centroids is not None and len(centroids) >= config.atmos.frames_per_estimate:
        report.fried = r0_series(centroids, config.atmos.frames_per_estimate, config.channel.beam_diameter,
                                 config.channel.wavelength_beacon)
    if counts:
        report.tomography = reconstruct_series(list(counts), config.tomography.max_iterations,
                                               config.tomography.tolerance)
    return report


@dataclass
class RunFiles:
    """Paths of one run directory; optional inputs are None when absent."""

    transmitter: str
    receiver: str
    centroids: Optional[str] = None
    tomography: Optional[str] = None

    @classmethod
    def locate(cls, run_dir: str) -> "RunFiles":
        """
        Raises:
            FileFormatError: If the directory holds no transmitter or receiver record.
        """
        def existing(name):
            path = os.path.join(run_dir, name)
            return path if os.path.exists(path) else None

        transmitter = existing(TX_FILE) or existing(SOURCE_SIDECAR)
        receiver = existing(RX_FILE)
        if transmitter is None or receiver is None:
            raise FileFormatError(f"{run_dir}: expected {TX_FILE} (or {SOURCE_SIDECAR}) and {RX_FILE}")
        return cls(transmitter, receiver, existing(CENTROID_FILE), existing(TOMOGRAPHY_FILE))


def open_emission_source(path: str, source: SourceConfig):
    """EmissionTable for a time-tag file, SourceReplay for a source sidecar."""
    if path.endswith(".json"):
        replay = read_source_sidecar(path)
        logger.info(f"Regenerating emissions from the source settings in {path}")
        return SourceReplay(replay)
    return EmissionTable(tags_to_emissions(read_timetags(path), source.period))


def load_detections(path: str) -> DetectionBatch:
    return tags_to_detections(read_timetags(path))
