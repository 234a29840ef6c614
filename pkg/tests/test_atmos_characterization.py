"""
Tests for centroid extraction and Fried parameter estimation.
"""
import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import ConfigError, DegenerateBlockError, DomainError
from src.services.atmos_characterization import (
    AtmosConfig,
    FrameGrid,
    FriedEstimate,
    centroid_from_frame,
    centroids_from_frames,
    cn2_from_r0,
    fluctuation_stats,
    r0_from_block,
    r0_from_cn2,
    r0_from_tilt_variance,
    r0_series,
    summarize_turbulence,
    tilt_variance_from_r0,
)
from src.services.channel_model import CentroidSample, synth_centroid_series


class TestTiltLaw(unittest.TestCase):

    def test_outdoor_mean_value(self):
        sigma2 = tilt_variance_from_r0(0.0783, 0.12, 850e-9)
        self.assertAlmostEqual(sigma2 / 3.94e-9, 1.0, delta=0.005)

    def test_round_trip(self):
        for r0 in (0.01, 0.0783, 0.1, 1.0):
            back = r0_from_tilt_variance(tilt_variance_from_r0(r0, 0.12, 850e-9), 0.12, 850e-9)
            self.assertAlmostEqual(back / r0, 1.0, delta=1e-12)
        self.assertAlmostEqual(float(r0_from_tilt_variance(3.94e-9, 0.12, 850e-9)), 0.0783, delta=0.0003)

    def test_rejects_non_positive_inputs(self):
        with self.assertRaises(DomainError):
            tilt_variance_from_r0(0.0, 0.12, 850e-9)
        with self.assertRaises(DomainError):
            r0_from_tilt_variance(-1e-9, 0.12, 850e-9)

    def test_cn2_conversion(self):
        cn2 = float(cn2_from_r0(0.0783, 850e-9, 1200.0))
        self.assertTrue(2.36e-15 <= cn2 <= 3.20e-15)
        self.assertAlmostEqual(float(r0_from_cn2(cn2, 850e-9, 1200.0)) / 0.0783, 1.0, delta=1e-12)
        self.assertGreater(float(cn2_from_r0(0.05, 850e-9, 1200.0)), cn2)


class TestBlocks(unittest.TestCase):

    def test_constant_block_is_degenerate(self):
        with self.assertRaises(DegenerateBlockError):
            r0_from_block(np.ones(20), np.ones(20), 0.12, 850e-9)
        with self.assertRaises(DomainError):
            r0_from_block(np.ones(1), np.ones(1), 0.12, 850e-9)

    def test_series_keeps_degenerate_blocks_and_drops_partial_tail(self):
        rng = np.random.default_rng(0)
        samples = [CentroidSample(k / 20.0, 0.0, 0.0) for k in range(20)]
        samples += [CentroidSample(1.0 + k / 20.0, *rng.normal(0, 4e-5, 2)) for k in range(20)]
        samples += [CentroidSample(2.0 + k / 20.0, 1e-5 * k, 0.0) for k in range(7)]
        estimates = r0_series(samples, 20, 0.12, 850e-9)
        self.assertEqual(len(estimates), 2)
        self.assertTrue(estimates[0].degenerate)
        self.assertEqual(estimates[1].second_index, 1)
        self.assertGreater(estimates[1].r0, 0.0)
        with self.assertRaises(DomainError):
            r0_series(samples, 1, 0.12, 850e-9)

    def test_closed_loop_recovers_r0(self):
        series = synth_centroid_series(0.0783, 0.12, 850e-9, 20.0, 600.0, 10.0, seed=12)
        estimates = r0_series(series, 20, 0.12, 850e-9)
        self.assertEqual(len(estimates), 600)
        median = float(np.median([e.r0 for e in estimates]))
        self.assertAlmostEqual(median / 0.0783, 1.0, delta=0.15)

    def test_fluctuation_stats(self):
        mean, spread = fluctuation_stats([1.0, 2.0, 3.0])
        self.assertEqual(mean, 2.0)
        self.assertAlmostEqual(spread, 50.0)
        with self.assertRaises(DomainError):
            fluctuation_stats([1.0])
        with self.assertRaises(DomainError):
            fluctuation_stats([1.0, -1.0])

    def test_summary(self):
        estimates = [FriedEstimate(0, 0.07, 20, 1e-9), FriedEstimate(1, None, 20, 0.0),
                     FriedEstimate(2, 0.09, 20, 1e-9)]
        summary = summarize_turbulence(estimates, 850e-9, 1200.0)
        self.assertAlmostEqual(summary.mean_r0, 0.08)
        self.assertEqual(summary.degenerate, 1)
        self.assertEqual(summary.as_dict()["estimates"], 3)
        self.assertIsNone(summarize_turbulence(estimates[1:2], 850e-9, 1200.0).mean_r0)
        self.assertIsNone(summarize_turbulence(estimates[:1], 850e-9, 1200.0).relative_std)


class TestFrames(unittest.TestCase):

    def test_centroid_of_a_single_bright_pixel(self):
        img = np.zeros((5, 7))
        img[1, 5] = 10.0
        tx, ty = centroid_from_frame(FrameGrid(img, 2e-6))
        self.assertAlmostEqual(tx, 2 * 2e-6)
        self.assertAlmostEqual(ty, -1 * 2e-6)

    def test_background_subtraction(self):
        img = np.full((4, 4), 1.0)
        img[0, 0] = 5.0
        tx, ty = centroid_from_frame(FrameGrid(img, 1.0), background=1.0)
        self.assertAlmostEqual(tx, -1.5)
        self.assertAlmostEqual(ty, -1.5)
        with self.assertRaises(DomainError):
            centroid_from_frame(FrameGrid(np.ones((3, 3)), 1.0), background=2.0)

    def test_frame_validation(self):
        with self.assertRaises(DomainError):
            FrameGrid(np.ones(4), 1.0)
        with self.assertRaises(DomainError):
            FrameGrid(-np.ones((2, 2)), 1.0)

    def test_frames_with_no_signal_are_skipped(self):
        bright = np.zeros((3, 3))
        bright[1, 1] = 1.0
        track = centroids_from_frames([bright, np.zeros((3, 3)), bright], 20.0, 1e-6)
        self.assertEqual(len(track), 2)
        self.assertEqual(track.skipped, 1)
        np.testing.assert_allclose(track.t, [0.0, 0.1])
        np.testing.assert_allclose(track.theta_x, 0.0)

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            AtmosConfig(plate_scale=0.0)
        with self.assertRaises(ConfigError):
            AtmosConfig(frames_per_estimate=1)


if __name__ == '__main__':
    unittest.main()
