"""
End-to-end link simulation: transmitter pulses through the free-space channel
into the decoder and detectors, plus the beacon camera centroids and the
beacon polarization tomography counts of the same run.

Outputs (in one directory):
    transmitter.ttag or transmitter_source.json  emitted pulses, or the source
                                                 settings to regenerate them
    receiver.ttag                                detections
    centroids.csv                                beacon centroid series
    tomography_counts.csv                        six-state counts per second
    truth.json                                   per-second ground truth (not in blind mode)
"""
import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from marshmallow import ValidationError

from ..errors import ConfigError, FileFormatError
from ..schemas.record_schemas import SourceSidecarSchema
from ..store.text_reports import CENTROID_COLUMNS, COUNTS_COLUMNS, write_csv_report, write_text
from ..store.timetag_store import TimeTagWriter, detections_to_tags, emissions_to_tags, write_timetags
from .channel_model import apply_channel, averaged_state, polarization_trajectory, scintillation_process, \
    synth_centroid_series, synth_r0_trajectory
from .polarization_tomography import project_counts, pure_state, purity
from .qkd_core import PS_PER_SECOND
from .receiver_model import DetectionBatch, detect_chunk, drift_at, expected_qber, phase_drift
from .source_model import CHUNK_SIZE, SourceConfig, chunk_rng, iter_pulse_chunks

logger = logging.getLogger(__name__)

TX_FILE = "transmitter.ttag"
SOURCE_SIDECAR = "transmitter_source.json"
RX_FILE = "receiver.ttag"
CENTROID_FILE = "centroids.csv"
TOMOGRAPHY_FILE = "tomography_counts.csv"
TRUTH_FILE = "truth.json"

DRIFT_STEP = 0.01


@dataclass(frozen=True)
class SimulationConfig:
    """
    duration in s; blockages are (start, stop) second intervals with the beam
    path fully blocked; target_qber, when set, calibrates the decoder
    misalignment; r0_trajectory draws per-second r0 fluctuations.
    """

    duration: float = 10.0
    blockages: Tuple[Tuple[float, float], ...] = ()
    max_emission_records: int = 20_000_000
    target_qber: Optional[float] = None
    r0_trajectory: bool = False
    write_tomography: bool = True

    def __post_init__(self):
        problems = []
        if self.duration < 0:
            problems.append("duration must be >= 0")
        if self.max_emission_records < 0:
            problems.append("max_emission_records must be >= 0")
        if self.target_qber is not None and not 0.0 < self.target_qber < 0.5:
            problems.append("target_qber must lie in (0, 0.5)")
        if any(b <= a for a, b in self.blockages):
            problems.append("blockage intervals must have start < stop")
        if problems:
            raise ConfigError("; ".join(f"simulation.{p}" for p in problems))


@dataclass
class SimulationSummary:
    pulses: int
    emissions: int
    detections: int
    background: int
    files: Dict[str, str]


def blocked_mask(times_ps: np.ndarray, blockages: Sequence[Tuple[float, float]]) -> np.ndarray:
    mask = np.zeros(len(times_ps), dtype=bool)
    for a, b in blockages:
        mask |= (times_ps >= int(a * PS_PER_SECOND)) & (times_ps < int(b * PS_PER_SECOND))
    return mask


def write_source_sidecar(path: str, source: SourceConfig) -> None:
    body = SourceSidecarSchema().dump({**asdict(source), "format_version": 1})
    write_text(path, json.dumps(body, sort_keys=True, indent=2) + "\n")


def read_source_sidecar(path: str) -> SourceConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            body = json.load(f)
    except (OSError, ValueError) as e:
        logger.error(f"Error reading source sidecar {path}: {str(e)}")
        raise FileFormatError(f"cannot read {path}: {e}") from e
    try:
        return SourceSidecarSchema().load(body)
    except ValidationError as err:
        raise FileFormatError(f"{path}: {err.messages}") from err


def _simulate_link(config, out_dir: str, blind: bool) -> Tuple[int, int, DetectionBatch, Optional[str]]:
    source, channel = config.source, config.channel
    duration = config.simulation.duration
    n = source.pulse_count(duration) if duration > 0 else 0
    scint = scintillation_process(channel, duration) if duration > 0 else None
    drift_rng = np.random.default_rng(np.random.SeedSequence(config.receiver.rng_seed, spawn_key=(0xD1F7,)))
    drift = phase_drift(config.receiver, max(duration, DRIFT_STEP), DRIFT_STEP, drift_rng)

    emitted_total = int(round(n * (source.class_proportions[0] + source.class_proportions[1])))
    tx_path = None
    writer = None
    if emitted_total <= config.simulation.max_emission_records:
        tx_path = os.path.join(out_dir, TX_FILE)
        writer = TimeTagWriter(tx_path)
    else:
        logger.info(f"{emitted_total} emissions exceed simulation.max_emission_records; "
                    f"writing the source settings instead")

    parts, emissions = [], 0
    try:
        for chunk in iter_pulse_chunks(source, 0, n):
            c = int(chunk.index[0]) // CHUNK_SIZE
            blocked = blocked_mask(chunk.emission_time, config.simulation.blockages) \
                if config.simulation.blockages else None
            survivors = apply_channel(chunk, channel, rng=chunk_rng(channel.rng_seed, c),
                                      scintillation=scint, blocked=blocked)
            phases = config.receiver.phase_B + drift_at(drift, chunk.emission_time, DRIFT_STEP)
            parts.append(detect_chunk(chunk, survivors, config.receiver, config.detector,
                                      rng=chunk_rng(config.detector.rng_seed, c),
                                      delay=channel.propagation_delay, decoder_phase=phases))
            tags = emissions_to_tags(chunk)
            emissions += len(tags)
            if writer is not None:
                writer.append(tags)
    finally:
        if writer is not None:
            writer.close()
    if tx_path is None:
        tx_path = os.path.join(out_dir, SOURCE_SIDECAR)
        write_source_sidecar(tx_path, source)

    detections = DetectionBatch.concatenate(parts).sorted()
    rx_path = os.path.join(out_dir, RX_FILE)
    write_timetags(rx_path, detections_to_tags(detections, blind))
    logger.info(f"Simulated {n} pulses: {emissions} emissions, {len(detections)} detections")
    return n, emissions, detections, tx_path


def _simulate_beacon(config, out_dir: str, echo: Sequence[str]) -> Tuple[Optional[np.ndarray], List[float]]:
    """Centroid series and tomography counts; returns the r0 trajectory and per-second purities."""
    sim, atmos, channel = config.simulation, config.atmos, config.channel
    duration = sim.duration
    trajectory = None
    if sim.r0_trajectory and duration > 0:
        trajectory = synth_r0_trajectory(channel.r0, atmos.relative_std, duration, atmos.rng_seed)

    rows = []
    if math.floor(atmos.frame_rate * duration + 1e-9) >= 2:
        series = synth_centroid_series(channel.r0, channel.beam_diameter, channel.wavelength_beacon,
                                       atmos.frame_rate, duration, channel.turbulence_corr_time,
                                       atmos.rng_seed + 1, trajectory)
        rows = list(zip(series.t.tolist(), series.theta_x.tolist(), series.theta_y.tolist()))
    write_csv_report(os.path.join(out_dir, CENTROID_FILE), CENTROID_COLUMNS, rows, echo)

    purities = []
    count_rows = []
    seconds = int(math.floor(duration + 1e-9))
    if sim.write_tomography and seconds > 0:
        pol = polarization_trajectory(config.drift, seconds)
        window = max(1, int(round(config.drift.step_rate)))
        states = averaged_state(pol, pure_state([1.0, 0.0]), window)
        rng = np.random.default_rng(np.random.SeedSequence(config.tomography.rng_seed))
        for k, rho in enumerate(states):
            counts = project_counts(rho, config.tomography.counts_per_basis, rng, second_index=k,
                                    integration=config.tomography.integration)
            purities.append(purity(rho))
            count_rows.append([k, *[int(c) for c in counts.as_array()], counts.integration])
    if sim.write_tomography:
        write_csv_report(os.path.join(out_dir, TOMOGRAPHY_FILE), COUNTS_COLUMNS, count_rows, echo)
    return trajectory, purities


def simulate(config, out_dir: str, config_echo: Sequence[str] = (), blind: bool = False) -> SimulationSummary:
    """
    Simulate one run and write its files.

    Deterministic under the configuration's seeds: the same configuration gives
    byte-identical files. A zero duration gives empty, valid files.

    Args:
        config: A RunConfig.
        out_dir: Output directory, created when missing.
        config_echo: Configuration echo lines embedded in the text outputs.
        blind: Strip the background marker and skip the ground-truth file.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise FileFormatError(f"cannot create {out_dir}: {e}") from e
    n, emissions, detections, tx_path = _simulate_link(config, out_dir, blind)
    trajectory, purities = _simulate_beacon(config, out_dir, config_echo)
    files = {"transmitter": tx_path, "receiver": os.path.join(out_dir, RX_FILE),
             "centroids": os.path.join(out_dir, CENTROID_FILE)}
    if config.simulation.write_tomography:
        files["tomography"] = os.path.join(out_dir, TOMOGRAPHY_FILE)

    background = int(np.count_nonzero(detections.is_background))
    if not blind:
        n_seconds = int(math.ceil(config.simulation.duration))
        per_second_counts = np.bincount(detections.timestamp // PS_PER_SECOND, minlength=n_seconds)
        truth = {
            "format_version": 1,
            "config": list(config_echo),
            "pulses": n,
            "emissions": emissions,
            "detections": int(len(detections)),
            "background": background,
            "expected_qber": expected_qber(config.source, config.receiver, config.detector,
                                           config.channel.mean_transmittance, config.coincidence.window),
            "per_second": [
                {
                    "second": s,
                    "detections": int(per_second_counts[s]),
                    "r0": float(trajectory[s]) if trajectory is not None and s < len(trajectory) else config.channel.r0,
                    "purity": purities[s] if s < len(purities) else None,
                }
                for s in range(n_seconds)
            ],
        }
        files["truth"] = os.path.join(out_dir, TRUTH_FILE)
        write_text(files["truth"], json.dumps(truth, sort_keys=True, indent=1) + "\n")
    return SimulationSummary(n, emissions, int(len(detections)), background, files)
