"""
Shared primitives for the time-bin BB84 pipeline.

Conventions used throughout the package:
- probabilities and rates are dimensionless floats in double precision;
- timestamps are integer picoseconds (numpy int64), never floats;
- the four BB84 time-bin states double as transmitter channel ids 0-3.
"""
import math
from enum import IntEnum
from fractions import Fraction
from typing import Union

import numpy as np
from scipy import special

from ..errors import DomainError

Probability = float

PS_PER_SECOND = 10 ** 12
INT64_MAX = int(np.iinfo(np.int64).max)

ArrayLike = Union[float, np.ndarray]


class Basis(IntEnum):
    """Measurement basis: Time holds Early/Late, Phase holds Plus/Minus."""

    TIME = 0
    PHASE = 1


class TimeBinState(IntEnum):
    """The four BB84 time-bin states; values are the transmitter channel ids."""

    EARLY = 0
    LATE = 1
    PLUS = 2
    MINUS = 3

    @property
    def basis(self) -> Basis:
        return Basis.TIME if self in (TimeBinState.EARLY, TimeBinState.LATE) else Basis.PHASE

    @property
    def bit(self) -> int:
        """Key bit carried by the state: Early/Plus -> 0, Late/Minus -> 1."""
        return 0 if self in (TimeBinState.EARLY, TimeBinState.PLUS) else 1

    @property
    def amplitudes(self) -> np.ndarray:
        """Complex amplitudes (alpha, beta) over the (|E>, |L>) time bins."""
        return STATE_AMPLITUDES[int(self)]

    def flipped(self) -> "TimeBinState":
        """The orthogonal state within the same basis."""
        return TimeBinState(int(self) ^ 1)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)

# Row i holds the amplitudes of TimeBinState(i).
STATE_AMPLITUDES = np.array([
    [1.0, 0.0],
    [0.0, 1.0],
    [_INV_SQRT2, _INV_SQRT2],
    [_INV_SQRT2, -_INV_SQRT2],
], dtype=complex)

STATE_BASIS = np.array([Basis.TIME, Basis.TIME, Basis.PHASE, Basis.PHASE], dtype=np.uint8)
STATE_BIT = np.array([0, 1, 0, 1], dtype=np.uint8)


def check_probability(value: float, name: str = "probability") -> Probability:
    """
    Validate that a value is a probability.

    Args:
        value: The value to check.
        name: Name used in the error message.

    Returns:
        The value as a float.

    Raises:
        DomainError: If the value is not in [0, 1].
    """
    value = float(value)
    if not 0.0 <= value <= 1.0 or math.isnan(value):
        raise DomainError(f"{name} must lie in [0, 1], got {value}")
    return value


def binary_entropy(p: ArrayLike) -> ArrayLike:
    """
    Binary Shannon entropy H2(p) in bits.

    H2(0) = H2(1) = 0 by continuity. Accepts scalars or numpy arrays.

    Raises:
        DomainError: If any p lies outside [0, 1].
    """
    arr = np.asarray(p, dtype=float)
    if np.any((arr < 0.0) | (arr > 1.0)) or np.any(np.isnan(arr)):
        raise DomainError(f"binary entropy is defined on [0, 1], got {p}")
    h = (special.entr(arr) + special.entr(1.0 - arr)) / math.log(2.0)
    if np.ndim(h) == 0:
        return float(h)
    return h


def qber_from_visibility(visibility: float) -> Probability:
    """
    Minimum QBER reachable with an interferometer of the given visibility, (1 - V) / 2.

    Raises:
        DomainError: If |V| > 1.
    """
    if abs(visibility) > 1.0:
        raise DomainError(f"visibility must satisfy |V| <= 1, got {visibility}")
    return (1.0 - visibility) / 2.0


def visibility_from_purity(purity: float) -> float:
    """
    Visibility sqrt(2P - 1) of a qubit state with purity P (rotationally symmetric noise).

    Raises:
        DomainError: If P is outside [0.5, 1].
    """
    if not 0.5 <= purity <= 1.0:
        raise DomainError(f"qubit purity must lie in [0.5, 1], got {purity}")
    return math.sqrt(max(0.0, 2.0 * purity - 1.0))


def pulse_period(repetition_rate: float) -> Fraction:
    """
    Exact pulse period in picoseconds as a fraction (20000/3 ps at 150 MHz).

    Raises:
        DomainError: If the rate is not a positive whole number of hertz, or
            its period is too fine a fraction for int64 timestamp arithmetic.
    """
    rate = int(round(repetition_rate))
    if rate <= 0 or abs(rate - repetition_rate) > 1e-6:
        raise DomainError(f"repetition rate must be a positive integer in Hz, got {repetition_rate}")
    period = Fraction(PS_PER_SECOND, rate)
    num, den = period.numerator, period.denominator
    if 2 * num * den + max(num, den) > INT64_MAX:
        raise DomainError(f"repetition rate {rate} Hz gives a period of {num}/{den} ps, "
                          f"too fine for exact timestamp arithmetic")
    return period


def emission_times(indices: np.ndarray, period: Fraction) -> np.ndarray:
    """
    Integer emission timestamps round(index * period) in picoseconds.

    Integer arithmetic keeps the rounding error below 1 ps for any run length;
    only the remainder modulo the period denominator is scaled, so the
    products stay inside int64.
    """
    idx = np.asarray(indices, dtype=np.int64)
    num, den = period.numerator, period.denominator
    whole, rest = np.divmod(idx, den)
    return whole * num + (rest * (2 * num) + den) // (2 * den)


def pulse_index_at(timestamps: np.ndarray, period: Fraction) -> np.ndarray:
    """Index of the pulse slot nearest to each timestamp (inverse of emission_times)."""
    ts = np.asarray(timestamps, dtype=np.int64)
    num, den = period.numerator, period.denominator
    whole, rest = np.divmod(ts, num)
    return whole * den + (rest * (2 * den) + num) // (2 * num)
