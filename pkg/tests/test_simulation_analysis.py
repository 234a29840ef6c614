"""
End-to-end tests: simulate a short scaled-down run, then analyze its files.
"""
import json
import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.config import format_config_echo, load_config
from src.errors import FileFormatError
from src.services.analysis_pipeline import (
    EmissionTable,
    RunFiles,
    SourceReplay,
    analyze,
    load_detections,
    near_anchors,
    open_emission_source,
)
from src.services.simulation import SOURCE_SIDECAR, TRUTH_FILE, TX_FILE, simulate
from src.services.source_model import SourceConfig
from src.store.timetag_store import read_timetags

# 5 MHz and 20 dB keep a run at a few seconds of compute with ~1e4 detections/s.
FAST_RUN = """
    source.repetition_rate = 5e6
    channel.loss_db = 20
    receiver.throughput = 1.0
    tomography.counts_per_basis = 20000
"""


def run_and_analyze(out_dir, extra="simulation.duration = 2\n", blind=False):
    config = load_config(FAST_RUN + extra)
    echo = format_config_echo(config)
    summary = simulate(config, out_dir, echo, blind=blind)
    files = RunFiles.locate(out_dir)
    emissions = open_emission_source(files.transmitter, config.source)
    report = analyze(config, emissions, load_detections(files.receiver))
    return config, summary, report


class TestSimulateThenAnalyze(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.out = cls._tmp.name
        cls.config, cls.summary, cls.report = run_and_analyze(cls.out)

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def test_files_are_written(self):
        for key in ("transmitter", "receiver", "centroids", "tomography", "truth"):
            self.assertTrue(os.path.exists(self.summary.files[key]), key)
        self.assertTrue(self.summary.files["transmitter"].endswith(TX_FILE))
        self.assertEqual(len(read_timetags(self.summary.files["receiver"])), self.summary.detections)

    def test_ground_truth(self):
        with open(self.summary.files["truth"], encoding="utf-8") as f:
            truth = json.load(f)
        self.assertEqual(truth["pulses"], 10_000_000)
        self.assertEqual(truth["detections"], self.summary.detections)
        self.assertEqual(len(truth["per_second"]), 2)

    def test_every_full_second_is_retained(self):
        self.assertEqual(self.report.retained_seconds[:2], [0, 1])
        for stats in self.report.stats[:2]:
            self.assertLess(abs(stats.delay - self.config.channel.propagation_delay), 100)

    def test_qber_and_keys(self):
        self.assertFalse(self.report.flagged)
        self.assertLess(self.report.mean_qber, 0.1)
        self.assertGreater(len(self.report.key_pair), 5000)
        self.assertIsNotNone(self.report.e_nu)
        self.assertEqual(set(np.unique(self.report.key_pair.second)), {0, 1})

    def test_histogram_peaks_at_zero_offset(self):
        hist = self.report.histogram
        peak = hist.offsets[int(np.argmax(hist.counts))]
        self.assertLess(abs(peak), 1000)

    def test_report_rows(self):
        rows = self.report.rows()
        self.assertEqual(rows[0][0], 0)
        self.assertIsNone(rows[0][1])
        self.assertTrue(rows[0][4])


class TestRunVariants(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()

    def test_same_seed_gives_identical_files(self):
        config = load_config(FAST_RUN + "simulation.duration = 0.2\n")
        a, b = os.path.join(self.tmp, "a"), os.path.join(self.tmp, "b")
        simulate(config, a)
        simulate(config, b)
        for name in (TX_FILE, "receiver.ttag", "centroids.csv"):
            with open(os.path.join(a, name), "rb") as fa, open(os.path.join(b, name), "rb") as fb:
                self.assertEqual(fa.read(), fb.read(), name)

    def test_blockage_drops_the_blocked_second(self):
        _, _, report = run_and_analyze(self.tmp, "simulation.duration = 3\nsimulation.blockages = 1-2\n")
        self.assertIn(0, report.retained_seconds)
        self.assertNotIn(1, report.retained_seconds)

    def test_blind_mode_strips_ground_truth(self):
        _, summary, _ = run_and_analyze(self.tmp, blind=True)
        self.assertNotIn("truth", summary.files)
        self.assertFalse(os.path.exists(os.path.join(self.tmp, TRUTH_FILE)))
        self.assertFalse(read_timetags(summary.files["receiver"]).flags.any())

    def test_source_settings_replace_a_large_emission_record(self):
        _, summary, report = run_and_analyze(self.tmp, "simulation.duration = 2\nsimulation.max_emission_records = 0\n")
        self.assertTrue(summary.files["transmitter"].endswith(SOURCE_SIDECAR))
        config = load_config(FAST_RUN)
        self.assertIsInstance(open_emission_source(summary.files["transmitter"], config.source), SourceReplay)
        self.assertEqual(report.retained_seconds[:2], [0, 1])

    def test_zero_duration_gives_empty_valid_files(self):
        config = load_config("simulation.duration = 0")
        summary = simulate(config, self.tmp)
        self.assertEqual(summary.detections, 0)
        files = RunFiles.locate(self.tmp)
        emissions = open_emission_source(files.transmitter, config.source)
        self.assertIsInstance(emissions, EmissionTable)
        report = analyze(config, emissions, load_detections(files.receiver))
        self.assertEqual(report.stats, [])
        self.assertTrue(report.flagged)

    def test_missing_records(self):
        with self.assertRaises(FileFormatError):
            RunFiles.locate(self.tmp)


class TestEmissionWindows(unittest.TestCase):
    """Anchored windows keep only emissions near detections."""

    def setUp(self):
        self.replay = SourceReplay(SourceConfig(rng_seed=4))

    def test_anchored_window_matches_the_filtered_window(self):
        anchors = np.array([1_000_000, 1_300_000, 40_000_000])
        full = self.replay.window(0, 50_000_000)
        expected = full.select(near_anchors(full.time, anchors, 50_000))
        for emissions in (self.replay, EmissionTable(full)):
            block = emissions.window(0, 50_000_000, anchors=anchors, reach=50_000)
            np.testing.assert_array_equal(block.index, expected.index)
            np.testing.assert_array_equal(block.time, expected.time)
            np.testing.assert_array_equal(block.state, expected.state)
        self.assertLess(len(expected), len(full))

    def test_full_second_at_150_mhz_follows_the_anchors(self):
        anchors = np.array([5_000_000, 250_000_000_000, 999_999_000_000])
        block = self.replay.window(0, 10 ** 12, anchors=anchors, reach=50_000)
        self.assertGreater(len(block), 0)
        self.assertLessEqual(len(block), 3 * 16)
        self.assertTrue(near_anchors(block.time, anchors, 50_000).all())
        self.assertTrue(np.all(np.diff(block.time) > 0))
        self.assertEqual(len(self.replay.window(0, 10 ** 12, anchors=np.zeros(0, np.int64), reach=50_000)), 0)


class TestFifteenMegahertzRun(unittest.TestCase):
    """A run at 15 MHz calibrated to a QBER of 0.0532, analyzed from its source settings."""

    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.config = load_config("""
            source.repetition_rate = 15e6
            channel.loss_db = 20
            receiver.throughput = 1.0
            tomography.counts_per_basis = 20000
            simulation.duration = 2
            simulation.target_qber = 0.0532
            simulation.max_emission_records = 0
        """)
        simulate(cls.config, cls._tmp.name)
        files = RunFiles.locate(cls._tmp.name)
        emissions = open_emission_source(files.transmitter, cls.config.source)
        cls.report = analyze(cls.config, emissions, load_detections(files.receiver))

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def test_delay_is_found_every_second(self):
        self.assertEqual(self.report.retained_seconds[:2], [0, 1])
        for stats in self.report.stats[:2]:
            self.assertLess(abs(stats.delay - self.config.channel.propagation_delay), 100)

    def test_qber_matches_the_calibration(self):
        self.assertAlmostEqual(self.report.mean_qber, 0.0532, delta=0.01)
        self.assertGreater(len(self.report.key_pair), 10_000)


if __name__ == '__main__':
    unittest.main()
