"""Run configuration: INI sections with typed keys and strict validation.

Unknown sections or keys are rejected so config drift fails loudly. CLI flags
override file values; every command writes the fully resolved config next to
its outputs for reproducibility audits.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass

# type tags: int | float | str | bool | ints | floats | strs
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "run": {
        "master_seed": ("int", 7),
    },
    "data": {
        "n_domains": ("int", 8),
        "n_targets": ("int", 2),
        "n_classes": ("int", 6),
        "channels": ("int", 3),
        "length": ("int", 128),
        "instances_per_domain": ("int", 600),
        "heterogeneity": ("float", 1.0),
        "base_noise": ("float", 0.08),
    },
    "classifier": {
        "conv_channels": ("ints", (16, 24, 32)),
        "kernel": ("int", 7),
        "strides": ("ints", (2, 2, 2)),
        "dense_width": ("int", 64),
    },
    "pretrain": {
        "epochs": ("int", 20),
        "learning_rate": ("float", 0.001),
        "l2_weight": ("float", 1e-4),
        "batch_size": ("int", 32),
        "holdout_fraction": ("float", 0.15),
    },
    "simulate": {
        "episodes": ("int", 300),
        "epochs": ("int", 25),
        "val_size": ("int", 200),
        "algorithms": ("strs", ("finetune", "dann", "cdan", "shot")),
        "labeled_samples": ("ints", (1, 50)),
        "unlabeled_samples": ("ints", (50, 300)),
        "learning_rate_range": ("floats", (1e-4, 1e-2)),
        "lambdas": ("floats", (0.1, 0.5, 1.0)),
        "optimizers": ("strs", ("adam", "sgd")),
        "label_noise_max": ("float", 0.3),
        "label_noise_prob": ("float", 0.5),
        "imbalance_prob": ("float", 0.5),
        "imbalance_min_weight": ("float", 0.2),
        "pretrain_epochs": ("int", 15),
        "batch_size": ("int", 32),
    },
    "estimator": {
        "hidden": ("int", 200),
        "head_hidden": ("int", 20),
        "learning_rate": ("float", 1e-5),
        "epochs": ("int", 200),
        "batch_episodes": ("int", 16),
        "clip_norm": ("float", 5.0),
        "val_fraction": ("float", 0.2),
    },
    "evaluate": {
        "algorithms": ("strs", ("finetune", "dann", "cdan", "shot")),
        "n_seeds": ("int", 10),
        "epochs": ("int", 25),
        "n_val": ("int", 200),
        "n_labeled": ("int", 25),
        "n_unlabeled": ("int", 200),
        "learning_rate": ("float", 0.001),
        "lam": ("float", 1.0),
        "batch_size": ("int", 32),
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]]

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    def set(self, section: str, key: str, raw: str):
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        self.values[section][key] = _parse(SCHEMA[section][key][0], raw,
                                           f"[{section}] {key}")

    def dump(self) -> str:
        parser = configparser.ConfigParser()
        for section, keys in self.values.items():
            parser[section] = {k: _format(v) for k, v in keys.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def default_config() -> RunConfig:
    return RunConfig({s: {k: spec[1] for k, spec in keys.items()}
                      for s, keys in SCHEMA.items()})


def load_config(path=None, overrides: list[tuple[str, str, str]] = ()) -> RunConfig:
    cfg = default_config()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser[section].items():
                cfg.set(section, key, raw)
    for section, key, raw in overrides:
        cfg.set(section, key, raw)
    return cfg


def _parse(kind: str, raw: str, where: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if kind == "str":
            return raw
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if kind == "ints":
            return tuple(int(s) for s in items)
        if kind == "floats":
            return tuple(float(s) for s in items)
        if kind == "strs":
            return tuple(items)
    except ValueError as err:
        raise ConfigError(f"bad value for {where}: {raw!r}") from err
    raise ConfigError(f"unhandled type {kind} for {where}")


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)
