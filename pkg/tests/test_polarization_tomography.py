"""
Tests for six-state tomography, purity and the wave-plate solver.
"""
import math
import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import DomainError
from src.services.channel_model import su2_step
from src.services.polarization_tomography import (
    SixStateCounts,
    compensation_angles,
    half_wave_plate,
    mle_reconstruct,
    process_fidelity,
    project_counts,
    pure_state,
    purity,
    quarter_wave_plate,
    qber_pol_from_purity,
    reconstruct_series,
    state_fidelity,
    stokes_vector,
    triplet_unitary,
)

PAULI_SUM = np.array([[1, 1 - 1j], [1 + 1j, -1]], dtype=complex) / math.sqrt(3)


def mixed_state(P: float) -> np.ndarray:
    """Qubit state of purity P with its Bloch vector along (1, 1, 1)."""
    r = math.sqrt(2 * P - 1)
    return (np.eye(2) + r * PAULI_SUM) / 2


class TestPurity(unittest.TestCase):

    def test_endpoints_and_the_mixed_value(self):
        self.assertEqual(qber_pol_from_purity(1.0), 0.0)
        self.assertEqual(qber_pol_from_purity(0.5), 0.5)
        self.assertAlmostEqual(qber_pol_from_purity(0.845), 0.0847, delta=1e-4)

    def test_monotone_decreasing(self):
        values = [qber_pol_from_purity(P) for P in np.linspace(0.5, 1.0, 11)]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))

    def test_unitary_invariance(self):
        rho = mixed_state(0.845)
        self.assertAlmostEqual(purity(rho), 0.845, places=12)
        U = su2_step(0.4, 1.1, -0.7)
        self.assertAlmostEqual(purity(U @ rho @ U.conj().T), purity(rho), places=12)

    def test_rejects_non_density_matrices(self):
        with self.assertRaises(DomainError):
            purity(np.eye(2))
        with self.assertRaises(DomainError):
            purity(np.array([[1.5, 0], [0, -0.5]]))

    def test_stokes_and_fidelity(self):
        H = pure_state([1, 0])
        np.testing.assert_allclose(stokes_vector(H), [0, 0, 1], atol=1e-12)
        self.assertAlmostEqual(state_fidelity([1, 0], H), 1.0)
        self.assertAlmostEqual(state_fidelity([1, 1], H), 0.5)


class TestReconstruction(unittest.TestCase):

    def test_recovers_a_mixed_state(self):
        rng = np.random.default_rng(0)
        counts = project_counts(mixed_state(0.845), 1_000_000, rng)
        result = mle_reconstruct(counts)
        self.assertAlmostEqual(purity(result.rho), 0.845, delta=0.01)

    def test_purity_within_two_points_at_typical_counts(self):
        rng = np.random.default_rng(1)
        for P in (0.6, 0.75, 0.95):
            counts = project_counts(mixed_state(P), 100_000, rng)
            self.assertAlmostEqual(purity(mle_reconstruct(counts).rho), P, delta=0.02)

    def test_likelihood_never_drops(self):
        counts = project_counts(mixed_state(0.9), 10_000, np.random.default_rng(2))
        history = mle_reconstruct(counts, max_iterations=50).log_likelihoods
        self.assertTrue(all(b >= a - 1e-9 for a, b in zip(history, history[1:])))

    def test_pure_state_stays_nearly_pure(self):
        counts = project_counts(pure_state([1, 0]), 100_000, np.random.default_rng(3))
        self.assertEqual(counts.V, 0)
        self.assertGreater(purity(mle_reconstruct(counts).rho), 0.97)

    def test_empty_pair_is_rejected(self):
        with self.assertRaises(DomainError):
            mle_reconstruct(SixStateCounts(0, 0, 5, 5, 5, 5))
        with self.assertRaises(DomainError):
            SixStateCounts(-1, 0, 0, 0, 0, 0)

    def test_series_rows(self):
        rng = np.random.default_rng(4)
        counts = [project_counts(mixed_state(0.8), 50_000, rng, second_index=s) for s in range(3)]
        rows = reconstruct_series(counts)
        self.assertEqual([r["second"] for r in rows], [0, 1, 2])
        for row in rows:
            self.assertTrue(0.0 <= row["qber_pol"] <= 0.5)
            self.assertEqual(len(row["stokes"]), 3)


class TestWavePlates(unittest.TestCase):

    def test_plate_conventions(self):
        np.testing.assert_allclose(quarter_wave_plate(0.0), np.diag([1, 1j]), atol=1e-12)
        np.testing.assert_allclose(half_wave_plate(math.pi / 4), [[0, 1], [1, 0]], atol=1e-12)

    def test_compensation_undoes_a_drift_unitary(self):
        U = su2_step(0.3, -0.2, 0.5)
        triplet = compensation_angles(U)
        self.assertTrue(triplet.converged)
        W = triplet_unitary(triplet.qwp1, triplet.hwp, triplet.qwp2) @ U
        self.assertGreater(process_fidelity(W), 0.999)
        for angle in (triplet.qwp1, triplet.hwp, triplet.qwp2):
            self.assertTrue(0.0 <= angle < math.pi)

    def test_rejects_non_unitary(self):
        with self.assertRaises(DomainError):
            compensation_angles(np.array([[1, 0], [0, 2]]))


if __name__ == '__main__':
    unittest.main()
