"""
Free-space channel: fixed loss, optional scintillation, beam-centroid wander
and beacon polarization drift.

Only the 850 nm beacon sees the polarization drift; the time-bin signal path is
affected by loss alone.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from ..errors import ConfigError, DomainError
from .atmos_characterization import tilt_variance_from_r0
from .qkd_core import PS_PER_SECOND, Probability
from .source_model import PulseTrain

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0

# Per-second r0 statistics of the two measured environments: (mean in m, relative std).
R0_PRESETS: Dict[str, Tuple[float, float]] = {
    "outdoor": (0.0783, 0.254),
    "indoor": (0.658, 0.653),
}


@dataclass(frozen=True)
class ChannelConfig:
    """Free-space link parameters. Lengths in m, turbulence_corr_time in ms, delay in ps."""

    loss_db: float = 38.4
    distance: float = 1200.0
    r0: float = 0.0783
    beam_diameter: float = 0.12
    wavelength_beacon: float = 850e-9
    wavelength_signal: float = 785e-9
    turbulence_corr_time: float = 10.0
    scintillation_index: float = 0.0
    propagation_delay: int = 4_000_000
    rng_seed: int = 1

    def __post_init__(self):
        problems = []
        if self.loss_db < 0:
            problems.append("loss_db must be >= 0")
        if self.r0 <= 0:
            problems.append("r0 must be positive")
        if self.distance <= 0:
            problems.append("distance must be positive")
        if self.scintillation_index < 0:
            problems.append("scintillation_index must be >= 0")
        if self.turbulence_corr_time <= 0:
            problems.append("turbulence_corr_time must be positive")
        if self.propagation_delay < 0:
            problems.append("propagation_delay must be >= 0")
        if problems:
            raise ConfigError("; ".join(f"channel.{p}" for p in problems))

    @property
    def mean_transmittance(self) -> Probability:
        return transmittance(self.loss_db)


class DriftMode(Enum):
    STATIC = "static"
    RANDOM_WALK = "random_walk"


@dataclass(frozen=True)
class PolarizationDriftConfig:
    """
    Beacon polarization drift.

    active_fraction is the share of seconds during which the fiber is being
    disturbed; in the remaining seconds the polarization transform holds still.
    """

    mode: DriftMode = DriftMode.STATIC
    step_angle_rms: float = 0.3
    step_rate: float = 50.0
    active_fraction: float = 1.0
    rng_seed: int = 2

    def __post_init__(self):
        if self.step_angle_rms < 0:
            raise ConfigError("drift.step_angle_rms must be >= 0")
        if self.step_rate <= 0:
            raise ConfigError("drift.step_rate must be positive")
        if not 0.0 <= self.active_fraction <= 1.0:
            raise ConfigError("drift.active_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class CentroidSample:
    """Angular beam-centroid displacement at time t (s), in rad."""

    t: float
    theta_x: float
    theta_y: float


@dataclass
class CentroidSeries:
    """Column-oriented centroid samples; iterating yields CentroidSample records."""

    t: np.ndarray
    theta_x: np.ndarray
    theta_y: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[CentroidSample]:
        for t, x, y in zip(self.t, self.theta_x, self.theta_y):
            yield CentroidSample(float(t), float(x), float(y))

    @classmethod
    def from_samples(cls, samples: Sequence[CentroidSample]) -> "CentroidSeries":
        return cls(np.array([s.t for s in samples], dtype=float),
                   np.array([s.theta_x for s in samples], dtype=float),
                   np.array([s.theta_y for s in samples], dtype=float))


def transmittance(loss_db: float) -> Probability:
    """
    Channel transmittance 10^(-loss_db / 10).

    Raises:
        DomainError: If loss_db is negative.
    """
    if loss_db < 0:
        raise DomainError(f"loss must be >= 0 dB, got {loss_db}")
    return 10.0 ** (-loss_db / 10.0)


def ar1_process(n: int, phi: float, std: float, rng: np.random.Generator) -> np.ndarray:
    """
    Stationary zero-mean Gaussian AR(1) series x[k] = phi * x[k-1] + e[k].

    The first value is drawn from the stationary distribution so the whole
    series has standard deviation `std`.
    """
    if n <= 0:
        return np.zeros(0)
    innovations = rng.standard_normal(n) * std * math.sqrt(1.0 - phi * phi)
    innovations[0] = rng.standard_normal() * std
    return signal.lfilter([1.0], [1.0, -phi], innovations)


@dataclass
class ScintillationProcess:
    """
    Unit-mean lognormal transmittance factor s(t) sampled on a regular grid.

    ln s is an AR(1) Gaussian with variance ln(1 + scintillation_index) and mean
    -variance / 2, so E[s] = 1 and Var[s] = scintillation_index.
    """

    step: float
    values: np.ndarray

    def factor_at(self, times_ps: np.ndarray) -> np.ndarray:
        if len(self.values) == 0:
            return np.ones(len(times_ps))
        k = (np.asarray(times_ps) // int(round(self.step * PS_PER_SECOND))).astype(np.int64)
        return self.values[np.clip(k, 0, len(self.values) - 1)]


def scintillation_process(config: ChannelConfig, duration: float) -> Optional[ScintillationProcess]:
    """Build the scintillation factor for a run; None when scintillation is off."""
    if config.scintillation_index == 0:
        return None
    corr_time = config.turbulence_corr_time * 1e-3
    step = corr_time / 10.0
    n = max(1, int(math.ceil(duration / step)) + 1)
    variance = math.log1p(config.scintillation_index)
    rng = np.random.default_rng(np.random.SeedSequence(config.rng_seed, spawn_key=(0xC0FFEE,)))
    log_s = ar1_process(n, math.exp(-step / corr_time), math.sqrt(variance), rng) - variance / 2.0
    return ScintillationProcess(step, np.exp(log_s))


def apply_channel(pulses: PulseTrain, config: ChannelConfig, rng: Optional[np.random.Generator] = None,
                  scintillation: Optional[ScintillationProcess] = None,
                  blocked: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Thin each pulse's photons by the channel transmittance.

    Args:
        pulses: Pulses entering the channel.
        config: Channel configuration.
        rng: Random generator; defaults to one seeded from config.rng_seed.
        scintillation: Optional transmittance factor s(t); s = 1 when None.
        blocked: Optional boolean mask of pulses whose path is blocked.

    Returns:
        Surviving photon number per pulse (never more than photon_count).
    """
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    eta = np.full(len(pulses), config.mean_transmittance)
    if scintillation is not None:
        eta = np.minimum(eta * scintillation.factor_at(pulses.emission_time), 1.0)
    if blocked is not None:
        eta = np.where(blocked, 0.0, eta)
    return rng.binomial(pulses.photon_count.astype(np.int64), eta)


def synth_centroid_series(r0: float, D: float, wavelength: float, frame_rate: float, duration: float,
                          corr_time: float, seed: int,
                          r0_trajectory: Optional[np.ndarray] = None) -> CentroidSeries:
    """
    Synthesize beam-centroid wander consistent with the tilt-variance law.

    Each axis is an AR(1) Gaussian with variance sigma2_2axis / 2 and lag-1
    autocorrelation exp(-1 / (frame_rate * corr_time)).

    Args:
        r0: Fried parameter in m (used when no trajectory is given).
        D: Receiver aperture diameter in m.
        wavelength: Beacon wavelength in m.
        frame_rate: Camera frame rate in Hz.
        duration: Series length in s.
        corr_time: Wander correlation time in ms.
        seed: Random seed.
        r0_trajectory: Optional per-second r0 values; second k uses r0_trajectory[k].

    Returns:
        The centroid series, sampled at t = k / frame_rate.

    Raises:
        DomainError: If an input is not positive or fewer than two frames result.
    """
    if min(r0, D, wavelength, frame_rate, duration) <= 0 or corr_time < 0:
        raise DomainError("centroid synthesis needs positive r0, D, wavelength, frame_rate and duration")
    n = int(math.floor(frame_rate * duration + 1e-9))
    if n < 2:
        raise DomainError(f"frame_rate * duration must give at least 2 frames, got {n}")
    phi = math.exp(-1.0 / (frame_rate * corr_time * 1e-3)) if corr_time > 0 else 0.0
    rng = np.random.default_rng(seed)
    unit_x = ar1_process(n, phi, 1.0, rng)
    unit_y = ar1_process(n, phi, 1.0, rng)
    t = np.arange(n) / frame_rate
    if r0_trajectory is None:
        axis_std = math.sqrt(tilt_variance_from_r0(r0, D, wavelength) / 2.0)
    else:
        trajectory = np.asarray(r0_trajectory, dtype=float)
        second = np.minimum(np.floor(t).astype(np.int64), len(trajectory) - 1)
        axis_std = np.sqrt(tilt_variance_from_r0(trajectory[second], D, wavelength) / 2.0)
    return CentroidSeries(t, unit_x * axis_std, unit_y * axis_std)


def synth_r0_trajectory(mean: float, relative_std: float, duration: float, seed: int) -> np.ndarray:
    """Per-second lognormal r0 values with the given mean (m) and relative standard deviation."""
    if mean <= 0 or relative_std < 0:
        raise DomainError("r0 trajectory needs a positive mean and a non-negative spread")
    n = max(1, int(math.ceil(duration)))
    sigma2 = math.log1p(relative_std ** 2)
    rng = np.random.default_rng(seed)
    return mean * np.exp(rng.standard_normal(n) * math.sqrt(sigma2) - sigma2 / 2.0)


_PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)


def su2_step(a: float, b: float, c: float) -> np.ndarray:
    """exp(-i (a sx + b sy + c sz) / 2) in closed form."""
    theta = math.sqrt(a * a + b * b + c * c)
    if theta == 0:
        return np.eye(2, dtype=complex)
    generator = (a * _PAULI[0] + b * _PAULI[1] + c * _PAULI[2]) / theta
    return math.cos(theta / 2) * np.eye(2) - 1j * math.sin(theta / 2) * generator


def _renormalize(u: np.ndarray) -> np.ndarray:
    left, _, right = np.linalg.svd(u)
    return left @ right


def polarization_trajectory(config: PolarizationDriftConfig, duration: float) -> np.ndarray:
    """
    Beacon polarization transform at each drift step.

    Returns:
        Array of shape (steps, 2, 2); entry k holds the unitary in force during
        [k / step_rate, (k + 1) / step_rate). Entry 0 is the identity.
    """
    steps = max(1, int(math.floor(duration * config.step_rate + 1e-9)))
    out = np.empty((steps, 2, 2), dtype=complex)
    out[:] = np.eye(2)
    if config.mode == DriftMode.STATIC or config.step_angle_rms == 0:
        return out
    rng = np.random.default_rng(config.rng_seed)
    angles = rng.normal(0.0, config.step_angle_rms, size=(steps, 3))
    seconds = int(math.ceil(duration)) + 1
    active = rng.random(seconds) < config.active_fraction
    current = np.eye(2, dtype=complex)
    for k in range(1, steps):
        if active[int(k / config.step_rate)]:
            current = _renormalize(su2_step(*angles[k]) @ current)
        out[k] = current
    logger.debug(f"Polarization trajectory: {steps} steps, {int(active.sum())} active seconds")
    return out


def averaged_state(trajectory: np.ndarray, rho_in: np.ndarray, window: int) -> np.ndarray:
    """
    Density matrices of rho_in transported by the trajectory, averaged over
    consecutive windows of `window` steps (a trailing partial window is dropped).
    """
    if window <= 0:
        raise DomainError("averaging window must hold at least one step")
    blocks = len(trajectory) // window
    u = trajectory[: blocks * window]
    transported = np.einsum("kab,bc,kdc->kad", u, rho_in, u.conj())
    return transported.reshape(blocks, window, 2, 2).mean(axis=1)
