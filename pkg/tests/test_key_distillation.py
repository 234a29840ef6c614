"""
Tests for decoy-state bounds, the key-rate calculator and offline distillation.
"""
import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import ConfigError, DomainError
from src.services.channel_model import transmittance
from src.services.key_distillation import (
    REPORTED_RUNS,
    DecoyConfig,
    DecoyObservables,
    asymptotic_key_rate,
    decoy_bounds,
    distill_offline,
    evaluate_key_rate,
    measured_f_ec,
    monte_carlo_observables,
    pa_output_length,
    poissonian_observables,
    reported_observables,
    true_single_photon,
)
from src.services.ldpc_codes import CodesConfig


class TestDecoyBounds(unittest.TestCase):

    def test_turbulent_run_point_values(self):
        bounds = decoy_bounds(reported_observables("turbulent"))
        self.assertAlmostEqual(bounds.Y1_lower / 1.414e-4, 1.0, delta=0.001)
        self.assertAlmostEqual(bounds.Q1_lower / 4.23e-5, 1.0, delta=0.002)
        self.assertAlmostEqual(bounds.e1_upper, 0.060, delta=0.0006)

    def test_bounds_hold_on_exact_poissonian_channels(self):
        for eta in np.logspace(-5, -2, 7):
            obs = poissonian_observables(0.488, 0.082, 3.65e-7, eta, 0.0532)
            bounds = decoy_bounds(obs)
            y1, e1 = true_single_photon(eta, 3.65e-7, 0.0532)
            self.assertLessEqual(bounds.Y1_lower, y1)
            self.assertGreaterEqual(bounds.e1_upper, e1)

    def test_weak_decoy_limit(self):
        eta = transmittance(38.4)
        obs = poissonian_observables(0.488, 1e-4, 3.65e-7, eta, 0.0532)
        self.assertLessEqual(decoy_bounds(obs).Y1_lower, true_single_photon(eta, 3.65e-7, 0.0532)[0])

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(0)
        eta = transmittance(38.4)
        y1, e1 = true_single_photon(eta, 3.65e-7, 0.0532)
        for _ in range(200):
            obs = monte_carlo_observables(0.488, 0.082, 3.65e-7, eta, 0.0532, 1e11, (0.8, 0.14, 0.06), rng)
            bounds = decoy_bounds(obs)
            self.assertTrue(0.93 * y1 <= bounds.Y1_lower <= y1)
            self.assertGreaterEqual(bounds.e1_upper, e1)

    def test_zero_yield_bound_means_no_key(self):
        obs = DecoyObservables(Q_mu=1e-3, Q_nu=0.0, E_mu=0.05, E_nu=0.05, Y0=0.0, mu=0.5, nu=0.1)
        bounds = decoy_bounds(obs)
        self.assertTrue(bounds.no_key)
        self.assertEqual(asymptotic_key_rate(obs, bounds).rate_per_pulse, 0.0)

    def test_observables_validation(self):
        with self.assertRaises(DomainError):
            DecoyObservables(1e-3, 1e-4, 0.05, 0.05, 0.0, mu=0.1, nu=0.5)
        with self.assertRaises(DomainError):
            reported_observables("indoor")


class TestKeyRate(unittest.TestCase):

    def test_reported_runs_fall_in_the_band(self):
        for run in REPORTED_RUNS:
            obs = reported_observables(run)
            report = asymptotic_key_rate(obs, decoy_bounds(obs))
            self.assertTrue(100.0 <= report.rate_per_second <= 260.0, (run, report.rate_per_second))

    def test_high_qber_gives_no_key(self):
        evaluation = evaluate_key_rate(DecoyConfig(qber=0.12))
        self.assertEqual(evaluation.report.rate_per_second, 0.0)
        self.assertFalse(evaluation.secure)

    def test_evaluation_dict(self):
        evaluation = evaluate_key_rate(DecoyConfig())
        row = evaluation.as_dict()
        self.assertTrue(row["secure"])
        self.assertEqual(row["f_ec"], 1.17)
        self.assertAlmostEqual(row["E_mu"], 0.0532)
        self.assertIn("Y1_lower", row)

    def test_explicit_decoy_error_rate(self):
        base = evaluate_key_rate(DecoyConfig())
        worse = evaluate_key_rate(DecoyConfig(e_nu=0.08))
        self.assertGreater(worse.bounds.e1_upper, base.bounds.e1_upper)
        self.assertLess(worse.report.rate_per_second, base.report.rate_per_second)

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            DecoyConfig(mu=0.05, nu=0.08)
        with self.assertRaises(ConfigError):
            DecoyConfig(f_ec=0.9)

    def test_reconciliation_efficiency(self):
        self.assertAlmostEqual(measured_f_ec(350, 1000, 0.0532), 1.17, delta=0.01)
        self.assertIsNone(measured_f_ec(350, 1000, 0.0))


class TestDistillation(unittest.TestCase):

    def setUp(self):
        self.codes = CodesConfig(block_length=1024, rate=0.5)
        self.rng = np.random.default_rng(3)

    def test_pa_length_accounting(self):
        self.assertEqual(pa_output_length(1000, 0.0, 100), 900)
        self.assertEqual(pa_output_length(1000, 0.5, 100), 0)
        self.assertEqual(pa_output_length(0, 0.0, 0), 0)

    def test_identical_keys_lose_only_the_disclosed_bits(self):
        key = self.rng.integers(0, 2, 2 * 1024 + 300, dtype=np.uint8)
        result = distill_offline(key, key.copy(), self.codes, seed=1)
        self.assertEqual(result.qber, 0.0)
        self.assertEqual(result.reconciled_bits, 2048)
        self.assertEqual(result.leaked_bits, 2 * (512 + 64))
        self.assertEqual(result.final_length, 2048 - 2 * (512 + 64))
        np.testing.assert_array_equal(result.transmitter_key, result.receiver_key)

    def test_noisy_keys_are_reconciled(self):
        tx = self.rng.integers(0, 2, 3 * 1024, dtype=np.uint8)
        rx = tx.copy()
        for block in range(3):
            flips = block * 1024 + self.rng.choice(1024, 20, replace=False)
            rx[flips] ^= 1
        result = distill_offline(tx, rx, self.codes, seed=2)
        self.assertEqual(result.failure_rate, 0.0)
        self.assertAlmostEqual(result.qber, 60 / 3072)
        self.assertEqual(result.final_length, pa_output_length(3072, result.qber, 3 * 576))
        self.assertTrue(result.secure)
        np.testing.assert_array_equal(result.transmitter_key, result.receiver_key)
        self.assertEqual(len(result.transmitter_key), result.final_length)

    def test_mismatched_lengths_are_rejected(self):
        with self.assertRaises(DomainError):
            distill_offline(np.zeros(10, np.uint8), np.zeros(11, np.uint8), self.codes)

    def test_short_key_yields_nothing(self):
        result = distill_offline(np.zeros(500, np.uint8), np.zeros(500, np.uint8), self.codes)
        self.assertIsNone(result.qber)
        self.assertFalse(result.secure)
        self.assertEqual(result.failure_rate, 0.0)


if __name__ == '__main__':
    unittest.main()
