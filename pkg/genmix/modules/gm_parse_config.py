import copy
import dataclasses
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

from extradict import NestedData

from genmix.internal.errors import ConfigError
from genmix.internal.utils import ConfigReadWrite, convert_to_bytes, get_genmix_logger
from genmix.modules.gm_attacks import AttackSpec, ROSTER_PRESETS, parse_attack
from genmix.modules.gm_defense import TrainConfig
from genmix.modules.gm_eval import SpecializationThresholds

DEFAULT_CONFIG = "genmix.internal.data.default_config.toml"
DEFENSE_MODES = ("joint", "separate")


def str2bool(v):
    return str(v).lower() in ("yes", "true", "t", "1")


def _flatten(tree: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat = {}
    for key, value in tree.items():
        path = f"{prefix}.{key}" if prefix else key
        if isinstance(value, dict):
            flat.update(_flatten(value, path))
        else:
            flat[path] = value
    return flat


class ConfigParser:
    """Packaged defaults, then the user TOML file, then flag overrides."""

    def __init__(self, config_file=None, overrides: Optional[Dict[str, Any]] = None,
                 logger=None):
        self.logger = logger or get_genmix_logger()
        self.conf_rw = ConfigReadWrite()
        self.config_file = config_file
        self.config_dict = self.conf_rw.read_toml(DEFAULT_CONFIG, is_packaged=True)
        self._known_paths = set(_flatten(self.config_dict))
        if os.getenv("GENMIX_OUT"):
            self.config_dict["out_dir"] = os.environ["GENMIX_OUT"]

        if config_file is not None:
            if not Path(config_file).exists():
                raise FileNotFoundError(f"config file not found: {config_file}")
            for path, value in _flatten(self.conf_rw.read_toml(config_file)).items():
                self.set(path, value)
        for path, value in (overrides or {}).items():
            if value is not None:
                self.set(path, value)
        self.__config_dict_set_default_values()

    def __config_dict_set_default_values(self):
        self.config_dict["progress"] = str2bool(self.config_dict.get("progress", True))
        defense = self.config_dict["defense"]
        for key in ("faster_init", "large_generator", "cache_attacks"):
            defense[key] = str2bool(defense.get(key, False))
        self.config_dict["evaluate"]["heatmaps"] = str2bool(
            self.config_dict["evaluate"].get("heatmaps", True))

    def set(self, nested_path: str, nested_value):
        if nested_path not in self._known_paths:
            raise ConfigError(f"unknown config key '{nested_path}'")
        if isinstance(nested_value, (list, tuple)):
            *parents, leaf = nested_path.split(".")
            node = self.config_dict
            for key in parents:
                node = node[key]
            node[leaf] = list(nested_value)
            return
        config_nested = NestedData(self.config_dict)
        config_nested.merge(nested_value, nested_path)
        self.config_dict = config_nested.data  # pylint: disable=no-member

    def get(self, nested_path: str, default=None):
        node = self.config_dict
        for key in nested_path.split("."):
            if not isinstance(node, dict) or key not in node:
                return default
            node = node[key]
        return node

    def snapshot(self) -> Dict[str, Any]:
        return copy.deepcopy(self.config_dict)

    def write(self, path):
        self.conf_rw.write_toml(path, self.config_dict)

    def get_seed(self) -> int:
        return int(self.config_dict["seed"])

    def get_threads(self) -> int:
        threads = int(self.config_dict["threads"])
        if threads < 1:
            raise ConfigError(f"threads must be >= 1, got {threads}")
        return threads

    def get_out_dir(self) -> Path:
        return Path(self.config_dict["out_dir"])

    def get_mnist_dir(self) -> Path:
        return Path(self.config_dict["mnist_dir"])

    def get_pretrain_settings(self) -> Dict[str, Any]:
        pretrain = self.config_dict["pretrain"]
        settings = {"epochs": int(pretrain["epochs"]), "lr": float(pretrain["lr"]),
                    "batch_size": int(pretrain["batch_size"])}
        if settings["epochs"] < 0 or settings["batch_size"] < 1 or settings["lr"] <= 0:
            raise ConfigError(f"invalid pretrain settings {settings}")
        return settings

    def get_defense_mode(self) -> str:
        mode = self.config_dict["defense"]["mode"]
        if mode not in DEFENSE_MODES:
            raise ConfigError(f"defense mode must be one of {DEFENSE_MODES}, got '{mode}'")
        return mode

    def get_train_config(self) -> TrainConfig:
        defense = self.config_dict["defense"]
        fields = {f.name for f in dataclasses.fields(TrainConfig)}
        values = {k: v for k, v in defense.items() if k in fields}
        values["seed"] = self.get_seed()
        values["progress"] = self.config_dict["progress"]
        try:
            convert_to_bytes(values.get("cache_limit", "0"))
        except ValueError as exc:
            raise ConfigError(f"invalid cache_limit '{values.get('cache_limit')}': {exc}")
        return TrainConfig(**values)

    def get_roster(self) -> List[AttackSpec]:
        defense = self.config_dict["defense"]
        if defense.get("attacks"):
            return [parse_attack(text) for text in defense["attacks"]]
        preset = defense.get("preset", "nine")
        if preset not in ROSTER_PRESETS:
            raise ConfigError(f"unknown roster preset '{preset}', expected one of "
                              f"{sorted(ROSTER_PRESETS)}")
        return list(ROSTER_PRESETS[preset])

    def get_thresholds(self) -> SpecializationThresholds:
        return SpecializationThresholds(**self.config_dict["specialization"])

    def get_evaluate_settings(self) -> Dict[str, Any]:
        return dict(self.config_dict["evaluate"])

    def get_bench_batch(self) -> int:
        batch = int(self.config_dict["bench"]["batch"])
        if batch < 1:
            raise ConfigError(f"bench batch must be >= 1, got {batch}")
        return batch
