import copy
import logging
from os import environ
from pathlib import Path

import rtoml

from ivbounds.errors import ConfigError

SETTINGS_ENV = "IVBOUNDS_SETTINGS"
OUTPUT_DIR_ENV = "IVBOUNDS_OUTPUT_DIR"

DEFAULTS = {
    "SEED": 0,
    "OUTPUT_DIR": "./out",
    "WORKERS": 1,
    "LOG_LEVEL": "INFO",
    "gen": {
        "count": 1,
        "n": 2048,
        "d_min": 5,
        "d_max": 10,
        "gamma": 0.1,
        "recenter": True,
        "family": "linear",
        "calib_n": 1024,
        "calib_d": 5,
    },
    "convert": {
        "preset": "jobs",
        "beta": 1.0,
        "contrast": "small-vs-regular",
        "outcome": "math",
    },
    "estimate": {
        "kind": "pooled",
        "bayes_alpha": 0.01,
        "thresholds": 64,
        "prior": "identified",
        "prior_concentration": 1.0,
        "position_shape": 0.5,
        "burn_in": 1000,
        "n_samples": 4000,
        "thinning": 1,
        "chains": 1,
        "bins": 1024,
    },
    "eval": {
        "benchmark": "binary",
        "seeds": 10,
        "methods": ["plugin", "bayes"],
        "repeats": 3,
    },
    "sweep": {
        "family": "linear",
        "calibration_k": 100,
        "sensitivity_k": 30,
        "alpha": 0.1,
        "n_grid": [256, 512, 1024, 2048, 4096],
        "d_grid": [2, 4, 8, 16, 32],
        "beta_grid": [0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
        "levels": [
            0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7,
            0.8, 0.85, 0.9, 0.925, 0.95, 0.96, 0.975, 0.99, 0.995,
        ],
    },
}


def _compatible(default, value):
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, type(default))


def _merge(target, overrides, prefix=""):
    for key, value in overrides.items():
        dotted = f"{prefix}{key}"
        if key not in target:
            raise ConfigError(f"unknown configuration key {dotted!r}")
        if isinstance(target[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"configuration key {dotted!r} must be a table")
            _merge(target[key], value, f"{dotted}.")
        elif not _compatible(target[key], value):
            raise ConfigError(f"configuration key {dotted!r} has the wrong type: {value!r}")
        else:
            target[key] = float(value) if isinstance(target[key], float) else value


def default_config():
    config = copy.deepcopy(DEFAULTS)
    if OUTPUT_DIR_ENV in environ:
        config["OUTPUT_DIR"] = environ[OUTPUT_DIR_ENV]
    return config


def load_config(path=None):
    config = default_config()
    if path is None:
        return config
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read settings {path}: {e}") from e
    try:
        overrides = rtoml.loads(text)
    except Exception as e:
        raise ConfigError(f"settings {path} are not valid TOML: {e}") from e
    _merge(config, overrides)
    return config


def dump_config(config, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(rtoml.dumps(config))


def set_log_level(level):
    logging.getLogger().setLevel(level)


CONFIG = default_config()

logging.basicConfig(
    format="[%(levelname)s %(name)s] %(message)s",
    level=logging.INFO,
)
