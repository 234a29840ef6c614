"""
Tests for the transmitter pulse train.
"""
import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import ConfigError, DomainError
from src.services.source_model import (
    CHUNK_SIZE,
    IntensityClass,
    IntensityKind,
    PulseTrain,
    SourceConfig,
    generate_pulse_train,
    iter_pulse_chunks,
    lookup_pulses,
    pulse_chunk,
    sample_photon_number,
)


class TestSourceConfig(unittest.TestCase):

    def test_defaults_are_valid(self):
        config = SourceConfig()
        self.assertEqual(config.pulse_count(1.0), 150_000_000)
        self.assertEqual(config.pulse_count(0.0), 0)

    def test_rejects_decoy_above_signal(self):
        with self.assertRaises(ConfigError):
            SourceConfig(mu_signal=0.1, mu_decoy=0.2)

    def test_rejects_proportions_not_summing_to_one(self):
        with self.assertRaises(ConfigError):
            SourceConfig(class_proportions=(0.5, 0.2, 0.2))

    def test_rejects_overlapping_slots(self):
        # 400 MHz leaves 2.5 ns per pulse, less than two bin separations
        with self.assertRaises(ConfigError):
            SourceConfig(repetition_rate=4e8)

    def test_vacuum_class_carries_no_photons(self):
        with self.assertRaises(DomainError):
            IntensityClass(IntensityKind.VACUUM, 0.1)


class TestPulseTrain(unittest.TestCase):

    def setUp(self):
        self.config = SourceConfig(rng_seed=11)

    def test_same_seed_gives_identical_chunks(self):
        a, b = pulse_chunk(self.config, 3), pulse_chunk(self.config, 3)
        np.testing.assert_array_equal(a.state, b.state)
        np.testing.assert_array_equal(a.photon_count, b.photon_count)

    def test_different_seed_changes_the_train(self):
        other = pulse_chunk(SourceConfig(rng_seed=12), 0)
        self.assertFalse(np.array_equal(pulse_chunk(self.config, 0).state, other.state))

    def test_chunked_iteration_matches_whole_chunks(self):
        parts = list(iter_pulse_chunks(self.config, 100, 2 * CHUNK_SIZE + 5))
        train = PulseTrain.concatenate(self.config, parts)
        self.assertEqual(len(train), 2 * CHUNK_SIZE - 95)
        self.assertEqual(int(train.index[0]), 100)
        np.testing.assert_array_equal(train.state[:10], pulse_chunk(self.config, 0).state[100:110])

    def test_emission_times_follow_the_pulse_index(self):
        train = pulse_chunk(self.config, 0)
        self.assertEqual(int(train.emission_time[0]), 0)
        self.assertEqual(int(train.emission_time[3]), 20000)

    def test_class_proportions_and_photon_statistics(self):
        train = PulseTrain.concatenate(self.config, list(iter_pulse_chunks(self.config, 0, 4 * CHUNK_SIZE)))
        n = len(train)
        signal = train.intensity == IntensityKind.SIGNAL
        decoy = train.intensity == IntensityKind.DECOY
        vacuum = train.intensity == IntensityKind.VACUUM
        self.assertAlmostEqual(signal.sum() / n, 0.80, delta=0.004)
        self.assertAlmostEqual(decoy.sum() / n, 0.14, delta=0.004)
        self.assertEqual(int(train.photon_count[vacuum].sum()), 0)
        self.assertAlmostEqual(train.photon_count[signal].mean(), 0.488, delta=0.01)
        self.assertAlmostEqual(train.photon_count[decoy].mean(), 0.082, delta=0.006)
        self.assertAlmostEqual(train.flipped.mean(), 0.02, delta=0.003)
        # the four states are uniform
        counts = np.bincount(train.state, minlength=4) / n
        np.testing.assert_allclose(counts, 0.25, atol=0.005)

    def test_emission_events_drop_vacuum_pulses(self):
        train = pulse_chunk(self.config, 0)
        events = train.emission_events()
        self.assertFalse(np.any(events.intensity == IntensityKind.VACUUM))
        self.assertEqual(len(events), int(np.count_nonzero(train.intensity != IntensityKind.VACUUM)))

    def test_lookup_preserves_order_across_chunks(self):
        indices = np.array([2 * CHUNK_SIZE + 17, 5, CHUNK_SIZE + 1, 5])
        looked = lookup_pulses(self.config, indices)
        np.testing.assert_array_equal(looked.index, indices)
        self.assertEqual(int(looked.state[0]), int(pulse_chunk(self.config, 2).state[17]))
        self.assertEqual(int(looked.state[2]), int(pulse_chunk(self.config, 1).state[1]))

    def test_generate_needs_positive_duration(self):
        with self.assertRaises(DomainError):
            generate_pulse_train(self.config, 0.0)
        train = generate_pulse_train(self.config, 1e-5)
        self.assertEqual(len(train), 1500)

    def test_sample_photon_number(self):
        rng = np.random.default_rng(5)
        self.assertEqual(sample_photon_number(IntensityClass(IntensityKind.VACUUM, 0.0), rng), 0)
        signal = IntensityClass(IntensityKind.SIGNAL, 0.488)
        draws = [sample_photon_number(signal, rng) for _ in range(20000)]
        self.assertAlmostEqual(float(np.mean(draws)), 0.488, delta=0.02)
        self.assertTrue(all(isinstance(d, int) and d >= 0 for d in draws))

    def test_record_view(self):
        record = pulse_chunk(self.config, 0)[0]
        self.assertEqual(record.index, 0)
        self.assertIn(record.intensity.kind, list(IntensityKind))


if __name__ == '__main__':
    unittest.main()
