import unittest
from pathlib import Path

import pytest

from genmix.internal.errors import ConfigError
from genmix.modules.gm_attacks import FGSM, PGD
from genmix.modules.gm_parse_config import ConfigParser


class TestConfigParser(unittest.TestCase):

    def setUp(self):
        self.maxDiff = None

    def _get_config_parser(self, conf_name="small_run.toml", overrides=None):
        return ConfigParser(f"unit_tests/configs/{conf_name}", overrides)

    def test_packaged_defaults(self):
        config_parser = ConfigParser()
        self.assertEqual(config_parser.get_seed(), 0)
        self.assertEqual(config_parser.get_threads(), 1)
        self.assertEqual(config_parser.get_pretrain_settings(),
                         {"epochs": 100, "lr": 1e-3, "batch_size": 128})
        train_config = config_parser.get_train_config()
        self.assertEqual((train_config.init_epochs, train_config.train_epochs), (10, 100))
        self.assertEqual(len(config_parser.get_roster()), 9)
        self.assertEqual(config_parser.get_defense_mode(), "joint")

    def test_file_is_merged_over_defaults(self):
        config_parser = self._get_config_parser()
        self.assertEqual(config_parser.get_seed(), 7)
        self.assertEqual(config_parser.get_pretrain_settings(),
                         {"epochs": 1, "lr": 1e-3, "batch_size": 20})
        train_config = config_parser.get_train_config()
        self.assertEqual(train_config.generators, 2)
        self.assertEqual(train_config.seed, 7)
        self.assertFalse(train_config.progress)
        self.assertEqual(train_config.perturb_fraction, 0.05)
        self.assertEqual([s.label for s in config_parser.get_roster()], ["FGSM:0.3", "AGN:3"])
        self.assertFalse(config_parser.get_evaluate_settings()["heatmaps"])
        self.assertEqual(config_parser.get_bench_batch(), 6)

    def test_overrides_win_over_file(self):
        config_parser = self._get_config_parser(overrides={
            "defense.generators": 5, "seed": 11, "defense.attacks": ["PGD:0.1"],
            "defense.faster_init": True, "pretrain.epochs": None})
        train_config = config_parser.get_train_config()
        self.assertEqual(train_config.generators, 5)
        self.assertEqual(train_config.seed, 11)
        self.assertTrue(train_config.faster_init)
        self.assertEqual(config_parser.get_pretrain_settings()["epochs"], 1)
        self.assertEqual([s.kind for s in config_parser.get_roster()], [PGD])
        # sibling keys survive a nested override
        self.assertEqual(train_config.batch_size, 4)

    def test_preset_roster(self):
        config_parser = ConfigParser(overrides={"defense.preset": "three"})
        self.assertEqual([s.kind for s in config_parser.get_roster()], [FGSM, PGD, "DF"])
        with self.assertRaises(ConfigError):
            ConfigParser(overrides={"defense.preset": "eleven"}).get_roster()

    def test_unknown_key(self):
        with self.assertRaisesRegex(ConfigError, "defense.generator_count"):
            self._get_config_parser("unknown_key.toml")

    def test_broken_toml(self):
        with self.assertRaises(ConfigError):
            self._get_config_parser("broken.toml")

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            self._get_config_parser("does_not_exist.toml")

    def test_bad_attack(self):
        with self.assertRaisesRegex(ConfigError, "LASER"):
            self._get_config_parser("bad_attack.toml").get_roster()

    def test_invalid_values_fail_on_access(self):
        for overrides, getter in (({"defense.generators": 0}, "get_train_config"),
                                  ({"defense.mode": "mixed"}, "get_defense_mode"),
                                  ({"defense.cache_limit": "lots"}, "get_train_config"),
                                  ({"threads": 0}, "get_threads"),
                                  ({"pretrain.lr": -1.0}, "get_pretrain_settings")):
            config_parser = ConfigParser(overrides=overrides)
            with self.assertRaises(ConfigError, msg=str(overrides)):
                getattr(config_parser, getter)()

    def test_snapshot_round_trip(self):
        config_parser = self._get_config_parser()
        snapshot = config_parser.snapshot()
        snapshot["seed"] = 99
        self.assertEqual(config_parser.get_seed(), 7)


class TestEnvironment:

    def test_out_dir_from_environment(self, monkeypatch, tmp_path):
        monkeypatch.setenv("GENMIX_OUT", str(tmp_path / "runs"))
        assert ConfigParser().get_out_dir() == tmp_path / "runs"

    def test_out_flag_beats_environment(self, monkeypatch, tmp_path):
        monkeypatch.setenv("GENMIX_OUT", str(tmp_path / "runs"))
        config_parser = ConfigParser(overrides={"out_dir": str(tmp_path / "flag")})
        assert config_parser.get_out_dir() == tmp_path / "flag"

    def test_written_config_reloads(self, tmp_path, monkeypatch):
        monkeypatch.delenv("GENMIX_OUT", raising=False)
        config_parser = ConfigParser("unit_tests/configs/small_run.toml")
        config_parser.write(tmp_path / "resolved.toml")
        reloaded = ConfigParser(tmp_path / "resolved.toml")
        assert reloaded.snapshot() == config_parser.snapshot()
        assert Path(tmp_path / "resolved.toml").exists()
