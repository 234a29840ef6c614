"""
Turbulence characterization from beacon images.

Beam-centroid extraction, the tilt-variance law relating two-axis centroid
variance to the Fried parameter, its inversion, Cn2 conversion and the
fluctuation statistics used to compare environments.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from ..errors import ConfigError, DegenerateBlockError, DomainError

logger = logging.getLogger(__name__)

TILT_COEFFICIENT = 0.364
# Plane-wave Kolmogorov constant of the r0 <-> Cn2 conversion.
PLANE_WAVE_CONSTANT = 0.423


@dataclass(frozen=True)
class AtmosConfig:
    """Beacon camera and turbulence synthesis settings; relative_std is a fraction, frame_rate in Hz."""

    frame_rate: float = 20.0
    frames_per_estimate: int = 20
    relative_std: float = 0.254
    plane_wave_constant: float = PLANE_WAVE_CONSTANT
    plate_scale: float = 5e-6
    background: float = 0.0
    rng_seed: int = 8

    def __post_init__(self):
        problems = []
        if self.frame_rate <= 0:
            problems.append("frame_rate must be positive")
        if self.frames_per_estimate < 2:
            problems.append("frames_per_estimate must be at least 2")
        if self.relative_std < 0:
            problems.append("relative_std must be >= 0")
        if self.plane_wave_constant <= 0:
            problems.append("plane_wave_constant must be positive")
        if self.plate_scale <= 0:
            problems.append("plate_scale must be positive")
        if self.background < 0:
            problems.append("background must be >= 0")
        if problems:
            raise ConfigError("; ".join(f"atmos.{p}" for p in problems))


@dataclass
class FrameGrid:
    """One camera frame. intensity has shape (height, width); plate_scale is rad/pixel."""

    intensity: np.ndarray
    plate_scale: float

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=float)
        if self.intensity.ndim != 2:
            raise DomainError("frame intensity must be a 2-D grid")
        if np.any(self.intensity < 0):
            raise DomainError("frame intensities must be non-negative")
        if self.plate_scale <= 0:
            raise DomainError("plate_scale must be positive")

    @property
    def width(self) -> int:
        return self.intensity.shape[1]

    @property
    def height(self) -> int:
        return self.intensity.shape[0]


@dataclass(frozen=True)
class FriedEstimate:
    """r0 estimated from one block of frames; r0 is None for a degenerate block."""

    second_index: int
    r0: Optional[float]
    n_frames: int
    sigma2_2axis: float

    @property
    def degenerate(self) -> bool:
        return self.r0 is None


def centroid_from_frame(frame: FrameGrid, background: Union[float, FrameGrid] = 0.0) -> Tuple[float, float]:
    """
    Intensity-weighted beam centroid as angles relative to the frame center.

    Args:
        frame: The frame.
        background: Scalar or per-pixel background, subtracted and clamped at zero.

    Returns:
        (theta_x, theta_y) in rad; x runs along columns, y along rows.

    Raises:
        DomainError: If nothing is left after background subtraction.
    """
    bg = background.intensity if isinstance(background, FrameGrid) else float(background)
    img = np.clip(frame.intensity - bg, 0.0, None)
    total = img.sum()
    if total <= 0:
        raise DomainError("frame is empty after background subtraction")
    ys, xs = np.indices(img.shape)
    cx, cy = (frame.width - 1) / 2.0, (frame.height - 1) / 2.0
    x = (img * xs).sum() / total
    y = (img * ys).sum() / total
    return (x - cx) * frame.plate_scale, (y - cy) * frame.plate_scale


def _check_positive(**values: float) -> None:
    for name, value in values.items():
        if np.any(np.asarray(value) <= 0):
            raise DomainError(f"{name} must be positive, got {value}")


def tilt_variance_from_r0(r0, D: float, wavelength: float):
    """Two-axis tilt variance 0.364 (D lambda / r0^2)^(5/3) in rad^2. Vectorizes over r0."""
    _check_positive(r0=r0, D=D, wavelength=wavelength)
    return TILT_COEFFICIENT * (D * wavelength / np.square(r0)) ** (5.0 / 3.0)


def r0_from_tilt_variance(sigma2, D: float, wavelength: float):
    """Exact inverse of tilt_variance_from_r0: r0 = sqrt(D lambda (0.364 / sigma2)^(3/5))."""
    _check_positive(sigma2=sigma2, D=D, wavelength=wavelength)
    return np.sqrt(D * wavelength * (TILT_COEFFICIENT / np.asarray(sigma2, dtype=float)) ** 0.6)


def r0_from_block(theta_x: np.ndarray, theta_y: np.ndarray, D: float, wavelength: float) -> Tuple[float, float]:
    """
    r0 of one block: sigma2 = Var(theta_x) + Var(theta_y) about the block mean (n-1 denominator).

    Returns:
        (r0, sigma2_2axis).

    Raises:
        DomainError: With fewer than two frames.
        DegenerateBlockError: If the block has zero variance.
    """
    if len(theta_x) < 2:
        raise DomainError("a block needs at least 2 frames")
    sigma2 = float(np.var(theta_x, ddof=1) + np.var(theta_y, ddof=1))
    if sigma2 <= 0:
        raise DegenerateBlockError("constant centroid block")
    return float(r0_from_tilt_variance(sigma2, D, wavelength)), sigma2


def r0_series(centroids, frames_per_estimate: int, D: float, wavelength: float) -> List[FriedEstimate]:
    """
    Per-block Fried parameter estimates over consecutive blocks of frames.

    Degenerate blocks are kept in the output with r0 = None. A trailing partial
    block is dropped.

    Args:
        centroids: A CentroidSeries or any sequence of CentroidSample.
        frames_per_estimate: Frames per block (20 gives one estimate per second at 20 Hz).
        D: Aperture diameter in m.
        wavelength: Beacon wavelength in m.

    Raises:
        DomainError: If frames_per_estimate < 2.
    """
    if frames_per_estimate < 2:
        raise DomainError("frames_per_estimate must be at least 2")
    if hasattr(centroids, "theta_x"):
        t = np.asarray(centroids.t, dtype=float)
        tx, ty = np.asarray(centroids.theta_x, dtype=float), np.asarray(centroids.theta_y, dtype=float)
    else:
        t = np.array([c.t for c in centroids], dtype=float)
        tx = np.array([c.theta_x for c in centroids], dtype=float)
        ty = np.array([c.theta_y for c in centroids], dtype=float)
    estimates = []
    for b in range(len(t) // frames_per_estimate):
        block = slice(b * frames_per_estimate, (b + 1) * frames_per_estimate)
        second = int(math.floor(t[block][0] + 1e-9))
        try:
            r0, sigma2 = r0_from_block(tx[block], ty[block], D, wavelength)
        except DegenerateBlockError:
            logger.warning(f"Degenerate centroid block {b} (second {second}): zero variance")
            estimates.append(FriedEstimate(second, None, frames_per_estimate, 0.0))
            continue
        estimates.append(FriedEstimate(second, r0, frames_per_estimate, sigma2))
    return estimates


def cn2_from_r0(r0, wavelength: float, L: float, constant: float = PLANE_WAVE_CONSTANT):
    """Refractive-index structure parameter Cn2 = r0^(-5/3) / (constant k^2 L), k = 2 pi / lambda."""
    _check_positive(r0=r0, wavelength=wavelength, L=L, constant=constant)
    k = 2.0 * math.pi / wavelength
    return np.asarray(r0, dtype=float) ** (-5.0 / 3.0) / (constant * k * k * L)


def r0_from_cn2(cn2, wavelength: float, L: float, constant: float = PLANE_WAVE_CONSTANT):
    """Inverse of cn2_from_r0."""
    _check_positive(cn2=cn2, wavelength=wavelength, L=L, constant=constant)
    k = 2.0 * math.pi / wavelength
    return (constant * k * k * L * np.asarray(cn2, dtype=float)) ** (-3.0 / 5.0)


def fluctuation_stats(series) -> Tuple[float, float]:
    """
    Mean and relative standard deviation (n-1 denominator) in percent.

    Raises:
        DomainError: With fewer than two values or a zero mean.
    """
    values = np.asarray(list(series), dtype=float)
    if len(values) < 2:
        raise DomainError("fluctuation statistics need at least 2 values")
    mean = float(values.mean())
    if mean == 0:
        raise DomainError("relative spread is undefined for a zero mean")
    return mean, float(values.std(ddof=1) / abs(mean) * 100.0)


@dataclass
class CentroidTrack:
    """Centroid angles extracted from a frame sequence; frames with no signal are skipped."""

    t: np.ndarray
    theta_x: np.ndarray
    theta_y: np.ndarray
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.t)


def centroids_from_frames(frames, frame_rate: float, plate_scale: float,
                          background: Union[float, FrameGrid] = 0.0) -> CentroidTrack:
    """Centroid of every frame (arrays of shape (rows, cols)); frame k is taken at t = k / frame_rate."""
    if frame_rate <= 0:
        raise DomainError("frame_rate must be positive")
    t, tx, ty = [], [], []
    skipped = 0
    for k, intensity in enumerate(frames):
        try:
            x, y = centroid_from_frame(FrameGrid(np.asarray(intensity, dtype=float), plate_scale), background)
        except DomainError:
            skipped += 1
            continue
        t.append(k / frame_rate)
        tx.append(x)
        ty.append(y)
    if skipped:
        logger.warning(f"Skipped {skipped} frame(s) with no signal above background")
    return CentroidTrack(np.array(t), np.array(tx), np.array(ty), skipped)


@dataclass
class TurbulenceSummary:
    mean_r0: Optional[float]
    relative_std: Optional[float]
    cn2: Optional[float]
    estimates: int
    degenerate: int

    def as_dict(self) -> dict:
        return {"mean_r0": self.mean_r0, "relative_std": self.relative_std, "cn2": self.cn2,
                "estimates": self.estimates, "degenerate": self.degenerate}


def summarize_turbulence(estimates: List[FriedEstimate], wavelength: float, L: float,
                         constant: float = PLANE_WAVE_CONSTANT) -> TurbulenceSummary:
    """Mean r0, relative spread in percent and the Cn2 of the mean r0 over non-degenerate estimates."""
    values = [e.r0 for e in estimates if e.r0 is not None]
    degenerate = len(estimates) - len(values)
    if not values:
        return TurbulenceSummary(None, None, None, len(estimates), degenerate)
    if len(values) == 1:
        mean, spread = values[0], None
    else:
        mean, spread = fluctuation_stats(values)
    return TurbulenceSummary(mean, spread, float(cn2_from_r0(mean, wavelength, L, constant)), len(estimates),
                             degenerate)
