"""
Transmitter model: the weak-coherent time-bin pulse train.

Each pulse carries one of the four BB84 time-bin states and one of three
intensity classes (signal, decoy, vacuum). The train is generated in fixed-size
chunks, each drawn from its own seed derived from (rng_seed, chunk_index), so
any chunk can be regenerated on its own and chunks can be produced in parallel
with results identical to a sequential run.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from functools import lru_cache
from typing import Iterator, List, Tuple

import numpy as np

from ..errors import ConfigError, DomainError
from .qkd_core import TimeBinState, emission_times, pulse_period

logger = logging.getLogger(__name__)

CHUNK_SIZE = 1 << 16


class IntensityKind(IntEnum):
    """Intensity class labels; values are stored in pulse arrays and file flags."""

    SIGNAL = 0
    DECOY = 1
    VACUUM = 2


@dataclass(frozen=True)
class IntensityClass:
    """An intensity class and its mean photon number per pulse."""

    kind: IntensityKind
    mean_photons: float

    def __post_init__(self):
        if self.mean_photons < 0:
            raise DomainError(f"mean photon number must be >= 0, got {self.mean_photons}")
        if self.kind == IntensityKind.VACUUM and self.mean_photons != 0:
            raise DomainError("vacuum pulses carry no photons")


@dataclass(frozen=True)
class SourceConfig:
    """Transmitter parameters. Times are in picoseconds, the rate in hertz."""

    repetition_rate: float = 1.5e8
    pulse_width: int = 300
    bin_separation: int = 2000
    mu_signal: float = 0.488
    mu_decoy: float = 0.082
    class_proportions: Tuple[float, float, float] = (0.80, 0.14, 0.06)
    intrinsic_error: float = 0.02
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        Check the configuration invariants.

        Raises:
            ConfigError: If any invariant is violated.
        """
        problems = []
        if len(self.class_proportions) != 3:
            problems.append("class_proportions must hold exactly three values")
        elif any(p < 0 for p in self.class_proportions) or abs(sum(self.class_proportions) - 1.0) > 1e-9:
            problems.append(f"class_proportions must be non-negative and sum to 1, got {self.class_proportions}")
        if not self.mu_signal > self.mu_decoy > 0:
            problems.append(f"need mu_signal > mu_decoy > 0, got {self.mu_signal} / {self.mu_decoy}")
        if self.bin_separation <= self.pulse_width:
            problems.append("bin_separation must exceed pulse_width")
        if not 0.0 <= self.intrinsic_error <= 1.0:
            problems.append("intrinsic_error must be a probability")
        try:
            period = pulse_period(self.repetition_rate)
        except DomainError as e:
            problems.append(str(e))
        else:
            if period - 2 * self.bin_separation <= self.pulse_width:
                problems.append("pulse period too short: the three time-bin slots of adjacent pulses overlap")
        if problems:
            raise ConfigError("; ".join(f"source.{p}" for p in problems))

    @property
    def period(self) -> Fraction:
        return pulse_period(self.repetition_rate)

    @property
    def classes(self) -> List[IntensityClass]:
        return [
            IntensityClass(IntensityKind.SIGNAL, self.mu_signal),
            IntensityClass(IntensityKind.DECOY, self.mu_decoy),
            IntensityClass(IntensityKind.VACUUM, 0.0),
        ]

    @property
    def mean_photon_table(self) -> np.ndarray:
        return np.array([self.mu_signal, self.mu_decoy, 0.0])

    def pulse_count(self, duration: float) -> int:
        """Number of pulses emitted in `duration` seconds."""
        return int(math.floor(Fraction(repr(float(duration))) * int(round(self.repetition_rate))))


@dataclass(frozen=True)
class PulseRecord:
    """One emitted pulse."""

    index: int
    emission_time: int
    state: TimeBinState
    intensity: IntensityClass
    photon_count: int


@dataclass
class PulseTrain:
    """
    Column-oriented pulse records.

    `flipped` is simulation ground truth: the pulse's measurement statistics are
    those of the orthogonal state in its basis (source preparation error).
    """

    config: SourceConfig
    index: np.ndarray
    emission_time: np.ndarray
    state: np.ndarray
    intensity: np.ndarray
    photon_count: np.ndarray
    flipped: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.flipped is None:
            self.flipped = np.zeros(len(self.index), dtype=bool)

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, i: int) -> PulseRecord:
        classes = self.config.classes
        return PulseRecord(
            index=int(self.index[i]),
            emission_time=int(self.emission_time[i]),
            state=TimeBinState(int(self.state[i])),
            intensity=classes[int(self.intensity[i])],
            photon_count=int(self.photon_count[i]),
        )

    def __iter__(self) -> Iterator[PulseRecord]:
        for i in range(len(self)):
            yield self[i]

    def select(self, mask: np.ndarray) -> "PulseTrain":
        """Sub-train of the pulses where mask (boolean or index array) selects."""
        return PulseTrain(self.config, self.index[mask], self.emission_time[mask], self.state[mask],
                          self.intensity[mask], self.photon_count[mask], self.flipped[mask])

    def emission_events(self) -> "PulseTrain":
        """Pulses that are actual emissions: vacuum slots suppress the laser trigger."""
        return self.select(self.intensity != IntensityKind.VACUUM)

    @classmethod
    def concatenate(cls, config: SourceConfig, parts: List["PulseTrain"]) -> "PulseTrain":
        if not parts:
            return cls.empty(config)
        return cls(config, *(np.concatenate([getattr(p, name) for p in parts]) for name in
                             ("index", "emission_time", "state", "intensity", "photon_count", "flipped")))

    @classmethod
    def empty(cls, config: SourceConfig) -> "PulseTrain":
        return cls(config, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.uint8),
                   np.zeros(0, np.uint8), np.zeros(0, np.uint16), np.zeros(0, bool))


def chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    """Random generator of one chunk, derived from (seed, chunk_index)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(chunk_index),)))


def pulse_chunk(config: SourceConfig, chunk_index: int) -> PulseTrain:
    """
    Generate chunk `chunk_index`, i.e. pulses [chunk_index * CHUNK_SIZE, (chunk_index + 1) * CHUNK_SIZE).

    Draw order within a chunk is fixed: states, class uniforms, photon numbers,
    preparation-error uniforms.
    """
    rng = chunk_rng(config.rng_seed, chunk_index)
    start = chunk_index * CHUNK_SIZE
    index = np.arange(start, start + CHUNK_SIZE, dtype=np.int64)
    state = rng.integers(0, 4, size=CHUNK_SIZE, dtype=np.uint8)
    cumulative = np.cumsum(config.class_proportions)
    kind = np.searchsorted(cumulative, rng.random(CHUNK_SIZE), side="right")
    kind = np.minimum(kind, IntensityKind.VACUUM).astype(np.uint8)
    photons = rng.poisson(config.mean_photon_table[kind]).astype(np.uint16)
    flipped = rng.random(CHUNK_SIZE) < config.intrinsic_error
    return PulseTrain(config, index, emission_times(index, config.period), state, kind, photons, flipped)


def iter_pulse_chunks(config: SourceConfig, start_index: int, stop_index: int) -> Iterator[PulseTrain]:
    """Yield the pulses [start_index, stop_index) chunk by chunk, in order."""
    if stop_index <= start_index:
        return
    first, last = start_index // CHUNK_SIZE, (stop_index - 1) // CHUNK_SIZE
    for c in range(first, last + 1):
        chunk = pulse_chunk(config, c)
        lo = max(start_index - c * CHUNK_SIZE, 0)
        hi = min(stop_index - c * CHUNK_SIZE, CHUNK_SIZE)
        if lo == 0 and hi == CHUNK_SIZE:
            yield chunk
        else:
            yield chunk.select(slice(lo, hi))


def generate_pulse_train(config: SourceConfig, duration: float) -> PulseTrain:
    """
    Generate the full pulse train for `duration` seconds.

    Args:
        config: Validated source configuration.
        duration: Run length in seconds.

    Returns:
        floor(duration * repetition_rate) pulses in emission order.

    Raises:
        DomainError: If duration is not positive.
    """
    if duration <= 0:
        raise DomainError(f"duration must be positive, got {duration}")
    n = config.pulse_count(duration)
    logger.debug(f"Generating {n} pulses ({duration} s at {config.repetition_rate:.3g} Hz)")
    return PulseTrain.concatenate(config, list(iter_pulse_chunks(config, 0, n)))


@lru_cache(maxsize=16)
def _cached_chunk(config: SourceConfig, chunk_index: int) -> PulseTrain:
    return pulse_chunk(config, chunk_index)


def lookup_pulses(config: SourceConfig, indices: np.ndarray) -> PulseTrain:
    """
    Regenerate the records of arbitrary pulse indices (random access into the train).

    The result preserves the order of `indices`.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        return PulseTrain.empty(config)
    chunk_of = indices // CHUNK_SIZE
    order = np.argsort(chunk_of, kind="stable")
    parts, positions = [], []
    for c in np.unique(chunk_of):
        members = order[chunk_of[order] == c]
        parts.append(_cached_chunk(config, int(c)).select(indices[members] - c * CHUNK_SIZE))
        positions.append(members)
    merged = PulseTrain.concatenate(config, parts)
    inverse = np.empty(indices.size, dtype=np.int64)
    inverse[np.concatenate(positions)] = np.arange(indices.size)
    return merged.select(inverse)


def sample_photon_number(intensity: IntensityClass, rng: np.random.Generator) -> int:
    """Poissonian photon number of a weak coherent pulse of the given class."""
    if intensity.mean_photons == 0:
        return 0
    return int(rng.poisson(intensity.mean_photons))
