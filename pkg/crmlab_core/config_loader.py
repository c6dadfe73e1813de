import json
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = {
    "scenario": {
        "name": "scenario",
        "family": "crm-scalar",
        "seed": 42,
    },
    "integrator": {
        "method": "rk45",
        "horizon": 15.0,
        "record_dt": 0.01,
        "dt": 0.001,
        "abs_tol": 1e-9,
        "rel_tol": 1e-7,
        "dt_max": 0.01,
    },
    "plant": {
        "a_p": 1.0,
        "k_p": 2.0,
        "x0": 1.0,
    },
    "reference": {
        "a_m": -1.0,
        "k_m": 1.0,
        "ell": -100.0,
        "x0": 0.0,
    },
    "adaptation": {
        "gamma": 100.0,
        "theta0": [0.0, 0.0],
    },
    "projection": {
        "enabled": False,
        "theta_bound": 5.0,
        "smoothing": 0.1,
    },
    "input": {
        "kind": "step",
        "amplitude": 1.0,
        "onset": 0.0,
    },
    "certificates": {
        "rel_tol": 1e-6,
        "abs_tol": 1e-9,
        "quadrature_factor": 10.0,
        "delta": 1.1,
        "epsilon": 0.1,
        "tail_start": 0.5,
    },
    "spectral": {
        "enabled": True,
        "channel": "theta",
        "window": [10.0, 15.0],
        "max_harmonics": 256,
    },
    "mimo": {
        "A": [[0.0, 1.0], [-1.0, -2.0]],
        "B": [[0.0], [1.0]],
        "Lambda": [[1.0]],
        "lambda_bar": 1.0,
        "A_m": [[0.0, 1.0], [-4.0, -4.0]],
        "g": -10.0,
        "gamma": 10.0,
        "theta_radius": 5.0,
        "k_radius": 2.0,
        "smoothing": 0.1,
        "x_p0": [1.0, 0.0],
        "x_m0": None,
        "Theta0": None,
        "K0": None,
    },
    "cmrac": {
        "eta": 1.0,
        "region_switch": 4.0,
        "filter_time_constant": 0.5,
        "step_amplitude": 1.0,
        "x_a0": 1.0,
        "x_o0": None,
        "x_m0": 0.0,
        "theta0": 0.0,
        "theta_hat0": 0.0,
        "use_truth": True,
        "compare": False,
    },
    "noise": {
        "enabled": False,
        "seed": None,
        "rate": 100.0,
        "raw_variance": 1.0,
        "clamp": 0.1,
    },
    "backstepping": {
        "phi": [[[{"coef": 1.0, "powers": {"x1": 2}}]], [[]]],
        "beta": 1.0,
        "theta_star": [1.0],
        "c": [2.0, 2.0],
        "Gamma": [[1.0]],
        "x0": [0.0, 0.5],
        "theta0": [0.0],
    },
    "robot": {
        "m1": 1.0,
        "m2": 1.0,
        "l1": 1.0,
        "l2": 1.0,
        "g0": 9.81,
        "lambda": 5.0,
        "k_d": [[10.0, 0.0], [0.0, 10.0]],
        "Gamma": [[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 5.0]],
        "q0": [0.3, 0.7],
        "qd0": [0.0, 0.0],
        "a_hat0": [0.0, 0.0, 0.0],
    },
    "sweep": {
        "axis": "ell",
        "values": [],
        "couple_gamma": False,
        "threads": 1,
    },
    "directories": {
        "output": "./crmlab_output",
        "logs": "./crmlab_output/logs",
        "failed_subdir": "failed",
    },
    "logging": {
        "level": "INFO",
        "format": "%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        "application_log_file": "application.log",
        "transaction_log_file": "transaction.log",
        "transaction_log_format": "%(asctime)s TXN [%(levelname)s]: %(message)s",
    },
    "plotting": {
        "enabled": True,
        "hashsalt": "crmlab",
    },
}

YAML_SUFFIXES = (".yaml", ".yml")
JSON_SUFFIXES = (".json",)
TOML_SUFFIXES = (".toml",)


def default_config():
    """A deep copy of the defaults."""
    return yaml.safe_load(yaml.safe_dump(DEFAULT_CONFIG))


def _deep_merge_dicts(base, new_val):
    for key, value in new_val.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_merge_dicts(base[key], value)
        else:
            base[key] = value
    return base


def merge_config(config, overrides):
    """Deep merge ``overrides`` into a copy of ``config``."""
    merged = yaml.safe_load(yaml.safe_dump(config))
    return _deep_merge_dicts(merged, overrides or {})


def _read_user_config(config_path):
    suffix = os.path.splitext(config_path)[1].lower()
    try:
        if suffix in TOML_SUFFIXES:
            with open(config_path, "rb") as f:
                return tomllib.load(f)
        with open(config_path, "r") as f:
            if suffix in JSON_SUFFIXES:
                return json.load(f)
            if suffix in YAML_SUFFIXES:
                return yaml.safe_load(f)
    except (yaml.YAMLError, json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Could not parse configuration file {config_path}: {e}") from e
    except OSError as e:
        raise ConfigError(f"Could not read configuration file {config_path}: {e}") from e
    raise ConfigError(f"Unsupported configuration format '{suffix}' for {config_path} (use .yaml, .yml, .toml or .json)")


def load_config(config_path=None):
    """Loads a scenario configuration merged over the defaults.

    Args:
        config_path (str): YAML, TOML or JSON file; None returns the defaults.

    Raises:
        ConfigError: The file is missing, unreadable or not a mapping.
    """
    config = default_config()

    if config_path is not None:
        if not os.path.exists(config_path):
            raise ConfigError(f"Configuration file {config_path} not found")
        user_config = _read_user_config(config_path)
        if user_config is None:
            logger.warning(f"Configuration file {config_path} is empty. Using default configuration.")
        elif not isinstance(user_config, dict):
            raise ConfigError(f"Configuration file {config_path} must contain a mapping at the top level")
        else:
            config = _deep_merge_dicts(config, user_config)
            logger.info(f"Successfully loaded and merged configuration from {config_path}")

    # Expand user paths for directories
    for key, path_val in config.get("directories", {}).items():
        if isinstance(path_val, str) and "subdir" not in key.lower():
            config["directories"][key] = os.path.expanduser(path_val)

    return config


def thread_limit(config, cli_threads=None):
    """Sweep worker count: CLI flag, else CRMLAB_THREADS, else sweep.threads."""
    if cli_threads is not None:
        value = cli_threads
    elif os.environ.get("CRMLAB_THREADS"):
        value = os.environ["CRMLAB_THREADS"]
    else:
        value = config.get("sweep", {}).get("threads", 1)
    try:
        value = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"sweep.threads: must be an integer, got {value!r}") from None
    if value < 1:
        raise ConfigError(f"sweep.threads: must be >= 1, got {value}")
    return value

