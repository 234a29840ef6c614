"""
Tests for the shared primitives: states, entropy, visibility and the pulse grid.
"""
import math
import os
import sys
import unittest
from fractions import Fraction

import numpy as np

# Add parent directory to path to import from src
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import ConfigError, DomainError
from src.services.qkd_core import (
    Basis,
    TimeBinState,
    binary_entropy,
    check_probability,
    emission_times,
    pulse_index_at,
    pulse_period,
    qber_from_visibility,
    visibility_from_purity,
)
from src.services.source_model import SourceConfig


class TestStates(unittest.TestCase):
    """Bases, bits and amplitudes of the four time-bin states."""

    def test_basis_and_bit(self):
        self.assertEqual(TimeBinState.EARLY.basis, Basis.TIME)
        self.assertEqual(TimeBinState.MINUS.basis, Basis.PHASE)
        self.assertEqual([s.bit for s in TimeBinState], [0, 1, 0, 1])

    def test_amplitudes_are_normalized_and_orthogonal_within_basis(self):
        for state in TimeBinState:
            self.assertAlmostEqual(np.vdot(state.amplitudes, state.amplitudes).real, 1.0, places=12)
            self.assertAlmostEqual(abs(np.vdot(state.amplitudes, state.flipped().amplitudes)), 0.0, places=12)

    def test_conjugate_bases_overlap_by_one_half(self):
        overlap = abs(np.vdot(TimeBinState.EARLY.amplitudes, TimeBinState.PLUS.amplitudes)) ** 2
        self.assertAlmostEqual(overlap, 0.5, places=12)


class TestEntropyAndVisibility(unittest.TestCase):

    def test_binary_entropy_endpoints_and_midpoint(self):
        self.assertEqual(binary_entropy(0.0), 0.0)
        self.assertEqual(binary_entropy(1.0), 0.0)
        self.assertAlmostEqual(binary_entropy(0.5), 1.0, places=12)

    def test_binary_entropy_is_symmetric_and_vectorized(self):
        p = np.array([0.01, 0.11, 0.3])
        np.testing.assert_allclose(binary_entropy(p), binary_entropy(1.0 - p), rtol=1e-12)

    def test_binary_entropy_rejects_values_outside_unit_interval(self):
        with self.assertRaises(DomainError):
            binary_entropy(1.2)
        with self.assertRaises(DomainError):
            binary_entropy(-0.1)

    def test_qber_from_visibility_floor(self):
        self.assertEqual(qber_from_visibility(0.16), 0.42)
        self.assertEqual(qber_from_visibility(1.0), 0.0)
        with self.assertRaises(DomainError):
            qber_from_visibility(1.5)

    def test_visibility_from_purity(self):
        self.assertEqual(visibility_from_purity(1.0), 1.0)
        self.assertEqual(visibility_from_purity(0.5), 0.0)
        with self.assertRaises(DomainError):
            visibility_from_purity(0.4)

    def test_check_probability(self):
        self.assertEqual(check_probability(0.25), 0.25)
        with self.assertRaises(DomainError):
            check_probability(float("nan"))


class TestPulseGrid(unittest.TestCase):

    def test_period_is_exact_fraction(self):
        self.assertEqual(pulse_period(150e6), Fraction(20000, 3))
        with self.assertRaises(DomainError):
            pulse_period(0)

    def test_emission_times_round_to_nearest_picosecond(self):
        period = pulse_period(150e6)
        times = emission_times(np.array([0, 1, 2, 3, 150_000_000]), period)
        np.testing.assert_array_equal(times, [0, 6667, 13333, 20000, 10 ** 12])

    def test_index_at_inverts_emission_times(self):
        period = pulse_period(150e6)
        idx = np.array([0, 7, 1_000_003, 90_000_000_000])
        np.testing.assert_array_equal(pulse_index_at(emission_times(idx, period), period), idx)
        np.testing.assert_array_equal(pulse_index_at(emission_times(idx, period) + 2000, period), idx)

    def test_long_runs_at_an_uneven_rate_stay_exact(self):
        period = pulse_period(1234567)
        self.assertEqual(period, Fraction(10 ** 12, 1234567))
        idx = [1, 12_345_670, 123_456_789, 1_234_567_000_000]
        exact = [math.floor(i * period + Fraction(1, 2)) for i in idx]
        times = emission_times(np.array(idx), period)
        np.testing.assert_array_equal(times, exact)
        self.assertEqual(int(times[1]), 10 ** 13)
        np.testing.assert_array_equal(pulse_index_at(times, period), idx)
        np.testing.assert_array_equal(pulse_index_at(times - 2000, period), idx)

    def test_rate_too_fine_for_int64_is_rejected(self):
        with self.assertRaises(DomainError):
            pulse_period(123456789)
        with self.assertRaises(ConfigError) as caught:
            SourceConfig(repetition_rate=123456789)
        self.assertIn("source.", str(caught.exception))


if __name__ == '__main__':
    unittest.main()
