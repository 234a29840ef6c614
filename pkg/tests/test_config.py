"""
Tests for configuration parsing, presets, seeding and the config echo.
"""
import os
import sys
import tempfile
import unittest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.config import (
    PRESETS,
    RunConfig,
    apply_seed,
    format_config_echo,
    load_config,
    load_config_file,
    parse_config_text,
)
from src.errors import ConfigError
from src.services.channel_model import DriftMode
from src.services.receiver_model import expected_qber


class TestParsing(unittest.TestCase):

    def test_defaults(self):
        self.assertEqual(load_config(), RunConfig())

    def test_comments_and_whitespace(self):
        sections = parse_config_text("""
            # a comment
            source.mu_signal = 0.5   # trailing comment
            channel.loss_db=30
        """)
        self.assertEqual(sections, {"source": {"mu_signal": "0.5"}, "channel": {"loss_db": "30"}})

    def test_values_are_typed(self):
        config = load_config("source.mu_signal = 0.5\ndrift.mode = random_walk\nsimulation.blockages = 1-2, 5-6.5")
        self.assertEqual(config.source.mu_signal, 0.5)
        self.assertEqual(config.drift.mode, DriftMode.RANDOM_WALK)
        self.assertEqual(config.simulation.blockages, ((1.0, 2.0), (5.0, 6.5)))
        self.assertEqual(config.source.mu_decoy, RunConfig().source.mu_decoy)

    def test_none_clears_an_optional_value(self):
        config = load_config("decoy.e_nu = 0.07")
        self.assertEqual(config.decoy.e_nu, 0.07)
        self.assertIsNone(load_config("decoy.e_nu = none").decoy.e_nu)

    def test_every_problem_is_reported(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config("source.bogus = 1\nchannel.loss_db = loud\ncodes.rate = 2")
        message = str(ctx.exception)
        self.assertIn("source.bogus", message)
        self.assertIn("channel.loss_db", message)
        self.assertIn("codes.rate", message)

    def test_malformed_documents(self):
        for text in ("nonsense", "mystery.key = 1", "source.mu_signal = 1\nsource.mu_signal = 2", "source = 1"):
            with self.assertRaises(ConfigError):
                parse_config_text(text)

    def test_cross_field_rules(self):
        with self.assertRaises(ConfigError):
            load_config("source.mu_signal = 0.05")
        with self.assertRaises(ConfigError):
            load_config("source.class_proportions = 0.5, 0.5, 0.5")


class TestPresetsAndSeeds(unittest.TestCase):

    def test_turbulent_preset_calibrates_the_qber(self):
        config = load_config(preset="turbulent-link")
        self.assertEqual(config.source.mu_signal, 0.488)
        self.assertEqual(config.simulation.target_qber, 0.0532)
        qber = expected_qber(config.source, config.receiver, config.detector, config.channel.mean_transmittance,
                             config.coincidence.window)
        self.assertAlmostEqual(qber, 0.0532, places=6)

    def test_document_overrides_the_preset(self):
        config = load_config("drift.mode = static", preset="depolarizing-link")
        self.assertEqual(config.drift.mode, DriftMode.STATIC)
        self.assertEqual(config.decoy.mu, 0.520)

    def test_unknown_preset(self):
        with self.assertRaises(ConfigError):
            load_config(preset="table2")
        self.assertEqual(sorted(PRESETS), ["depolarizing-link", "turbulent-link"])

    def test_seed_override(self):
        config = apply_seed(RunConfig(), 100)
        self.assertEqual(config.source.rng_seed, 100)
        self.assertEqual(config.channel.rng_seed, 101)
        self.assertEqual(config.codes.seed, 107)
        self.assertEqual(config.atmos.rng_seed, 108)
        with self.assertRaises(ConfigError):
            apply_seed(RunConfig(), -1)


class TestEchoAndFiles(unittest.TestCase):

    def test_echo_reloads_to_the_same_config(self):
        config = load_config("source.mu_signal = 0.6\nsimulation.blockages = 2-3\ndecoy.e_nu = 0.05", seed=9)
        echo = format_config_echo(config)
        self.assertEqual(echo, sorted(echo))
        self.assertIn("source.mu_signal = 0.6", echo)
        self.assertEqual(load_config("\n".join(echo)), config)

    def test_load_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.conf")
            with open(path, "w", encoding="utf-8") as f:
                f.write("channel.loss_db = 20\n")
            self.assertEqual(load_config_file(path).channel.loss_db, 20.0)
            with self.assertRaises(ConfigError):
                load_config_file(os.path.join(tmp, "missing.conf"))
        self.assertEqual(load_config_file(None), RunConfig())


if __name__ == '__main__':
    unittest.main()
