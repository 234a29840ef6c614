"""
Tests for coincidence histograms, delay search, slot classification and sifting.
"""
import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import ConfigError, DomainError
from src.services.qkd_core import Basis, TimeBinState, emission_times, pulse_period
from src.services.receiver_model import Slot
from src.services.timing_analysis import (
    CoincidenceConfig,
    EmissionBlock,
    PerSecondStats,
    TimingHistogram,
    build_histogram,
    classify_events,
    classify_on_grid,
    fit_peak_fwhm,
    mean_qber,
    optimize_delay,
    optimize_folded_delay,
    sift,
    sift_and_qber,
    snr_filter,
)

PERIOD = pulse_period(150e6)
TOF = 4_000_000


class TestHistogram(unittest.TestCase):

    def test_comb_at_the_pulse_period(self):
        emissions = np.array([0, 6667, 13333])
        detections = emissions + TOF + 50
        hist = build_histogram(emissions, detections, (-10_000, 10_000), 100, time_of_flight=TOF)
        self.assertEqual(len(hist.offsets), 200)
        counts = dict(hist.rows())
        self.assertEqual(counts[0], 3)
        self.assertEqual(counts[6700], 2)
        self.assertEqual(counts[-6700], 2)
        self.assertEqual(hist.total, 7)

    def test_rejects_bad_input(self):
        with self.assertRaises(DomainError):
            build_histogram(np.array([5, 1]), np.array([10]), (-100, 100), 10)
        with self.assertRaises(DomainError):
            build_histogram(np.array([1]), np.array([10]), (-100, 100), 0)

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            CoincidenceConfig(window=5000)
        with self.assertRaises(ConfigError):
            CoincidenceConfig(aggregation=0.0)


class TestDelaySearch(unittest.TestCase):

    def setUp(self):
        self.config = CoincidenceConfig()
        self.rng = np.random.default_rng(0)

    def test_finds_the_true_delay(self):
        index = np.flatnonzero(self.rng.random(20_000) < 0.5)
        emissions = emission_times(index, PERIOD)
        chosen = np.sort(self.rng.choice(len(emissions), 3000, replace=False))
        noise = np.round(self.rng.normal(0, 150, 3000)).astype(np.int64)
        detections = np.sort(emissions[chosen] + 4_012_340 + noise)
        result = optimize_delay(emissions, detections, self.config)
        self.assertLessEqual(abs(result.delay - 4_012_340), 20)
        self.assertGreater(result.coincidences, 2800)

    def test_search_stays_within_half_a_period(self):
        # every pulse emitted, so neighbouring pulses give equally tall central peaks
        emissions = emission_times(np.arange(20_000), PERIOD)
        chosen = np.sort(self.rng.choice(len(emissions), 3000, replace=False))
        slot = self.rng.choice(3, size=3000, p=[0.5, 0.25, 0.25])
        shift = np.array([0, 2000, -2000])[slot]
        noise = np.round(self.rng.normal(0, 150, 3000)).astype(np.int64)
        detections = np.sort(emissions[chosen] + TOF + 1234 + shift + noise)
        self.assertEqual(self.config.search_half_range(PERIOD), 3333)
        result = optimize_delay(emissions, detections, self.config, PERIOD)
        self.assertLessEqual(abs(result.delay - (TOF + 1234)), 20)
        self.assertGreater(result.coincidences, 1300)

    def test_search_range_at_15_mhz(self):
        period = pulse_period(15e6)
        self.assertEqual(self.config.search_half_range(period), 33333)
        self.assertEqual(self.config.search_half_range(pulse_period(1e6)), self.config.delay_search_range)
        self.assertEqual(self.config.search_half_range(), self.config.delay_search_range)
        emissions = emission_times(np.arange(4000), period)
        noise = np.round(self.rng.normal(0, 150, 4000)).astype(np.int64)
        detections = np.sort(emissions + TOF - 25_000 + noise)
        result = optimize_delay(emissions, detections, self.config, period)
        self.assertLessEqual(abs(result.delay - (TOF - 25_000)), 20)

    def test_refinement_follows_the_fullest_window(self):
        emissions = np.arange(130, dtype=np.int64) * 10_000_000
        detections = emissions + TOF + np.where(np.arange(130) < 100, 0, 700)
        result = optimize_delay(emissions, detections, self.config)
        self.assertEqual(result.coincidences, 130)
        self.assertGreater(result.delay - TOF, 200)
        self.assertLessEqual(result.delay - TOF, 500)

    def test_nothing_to_correlate(self):
        result = optimize_delay(np.zeros(0), np.array([1, 2]), self.config)
        self.assertIsNone(result.delay)
        self.assertEqual(result.coincidences, 0)

    def test_folded_search_picks_the_central_slot(self):
        index = np.arange(4000)
        slot = self.rng.choice(3, size=4000, p=[0.5, 0.25, 0.25])
        shift = np.array([0, 2000, -2000])[slot]
        noise = np.round(self.rng.normal(0, 150, 4000)).astype(np.int64)
        detections = np.sort(emission_times(index, PERIOD) + 4_001_234 + shift + noise)
        result = optimize_folded_delay(detections, PERIOD, self.config)
        self.assertLessEqual(abs(result.delay - 4_001_234), 20)
        self.assertIsNone(optimize_folded_delay(np.zeros(0), PERIOD, self.config).delay)


class TestClassifyAndSift(unittest.TestCase):

    def setUp(self):
        self.config = CoincidenceConfig()
        self.block = EmissionBlock(
            index=np.arange(5),
            time=np.array([0, 6667, 13333, 20000, 26667]),
            state=np.array([TimeBinState.EARLY, TimeBinState.LATE, TimeBinState.PLUS, TimeBinState.MINUS,
                            TimeBinState.EARLY], dtype=np.uint8),
            intensity=np.zeros(5, dtype=np.uint8),
        )
        # early slot of 0, a stray click, late slot of 1, central of 2, 3 and 4
        self.detections = np.array([4_002_100, 4_003_300, 4_004_667, 4_013_363, 4_019_960, 4_026_667])
        self.channels = np.array([0, 0, 1, 0, 0, 1])

    def test_classification(self):
        classified = classify_events(self.block, self.detections, self.channels, TOF, self.config)
        self.assertEqual(classified.unmatched, 1)
        np.testing.assert_array_equal(classified.pulse_index, [0, 1, 2, 3, 4])
        np.testing.assert_array_equal(classified.slot, [Slot.EARLY_SLOT, Slot.LATE_SLOT, Slot.CENTRAL_SLOT,
                                                        Slot.CENTRAL_SLOT, Slot.CENTRAL_SLOT])
        self.assertEqual(classified.slot_counts()[Slot.CENTRAL_SLOT], 3)

    def test_sift_keeps_matching_bases(self):
        classified = classify_events(self.block, self.detections, self.channels, TOF, self.config)
        pair = sift(classified)
        # pulse 4 is time basis but clicked in the central slot
        np.testing.assert_array_equal(pair.pulse_index, [0, 1, 2, 3])
        np.testing.assert_array_equal(pair.transmitter_bits, [0, 1, 0, 1])
        np.testing.assert_array_equal(pair.receiver_bits, [0, 1, 0, 0])
        np.testing.assert_array_equal(pair.basis_labels, [Basis.TIME, Basis.TIME, Basis.PHASE, Basis.PHASE])
        self.assertEqual(pair.errors, 1)
        self.assertEqual(pair.qber, 0.25)

    def test_sift_and_qber_per_second(self):
        classified = classify_events(self.block, self.detections, self.channels, TOF, self.config)
        result = sift_and_qber(classified)
        self.assertEqual(result.per_second, {0: (2, 0, 2, 1)})
        self.assertEqual(result.mean_qber, 0.25)
        self.assertIsNone(sift_and_qber(classified, retained_seconds=[3]).mean_qber)

    def test_classify_on_grid_keeps_the_earliest_click(self):
        detections = np.array([4_002_000, 4_004_667, 4_006_667, 4_013_333])
        grid = classify_on_grid(detections, np.array([0, 0, 1, 1]), TOF, PERIOD, self.config)
        np.testing.assert_array_equal(grid.pulse_index, [0, 1, 2])
        np.testing.assert_array_equal(grid.slot, [Slot.EARLY_SLOT, Slot.LATE_SLOT, Slot.CENTRAL_SLOT])
        np.testing.assert_array_equal(grid.measured_bits, [0, 1, 1])
        np.testing.assert_array_equal(grid.measured_basis, [Basis.TIME, Basis.TIME, Basis.PHASE])
        self.assertEqual(grid.unmatched, 0)


class TestFilteringAndFit(unittest.TestCase):

    def test_snr_filter_and_mean_qber(self):
        stats = [
            PerSecondStats(0, TOF, 600.0, sifted_time=50, errors_time=2, sifted_phase=50, errors_phase=4),
            PerSecondStats(1, TOF, 400.0, sifted_time=50, errors_time=20),
            PerSecondStats(2, None, 900.0),
        ]
        filtered = snr_filter(stats, 500.0)
        self.assertEqual([s.retained for s in filtered], [True, False, False])
        self.assertEqual(filtered[0].qber_time, 0.06)
        self.assertEqual(mean_qber(filtered), 0.06)
        self.assertIsNone(mean_qber(filtered[1:]))

    def test_peak_fwhm_matches_the_jitter(self):
        rng = np.random.default_rng(7)
        emissions = np.arange(20_000, dtype=np.int64) * 1_000_000
        sigma = 500 / (2 * np.sqrt(2 * np.log(2)))
        detections = emissions + TOF + np.round(rng.normal(0, sigma, 20_000)).astype(np.int64)
        hist = build_histogram(emissions, detections, (-3000, 3000), 50, time_of_flight=TOF)
        self.assertAlmostEqual(fit_peak_fwhm(hist, 0), 500.0, delta=50.0)

    def test_empty_peak_is_rejected(self):
        hist = TimingHistogram(100, np.arange(-1000, 1000, 100), np.zeros(20, dtype=np.int64))
        with self.assertRaises(DomainError):
            fit_peak_fwhm(hist, 0)


if __name__ == '__main__':
    unittest.main()
