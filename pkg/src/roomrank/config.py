"""Run settings for roomrank commands.

Tiered resolution for the shared settings (seed, workers), highest first:
  1. Command-line flag (--seed / --workers)
  2. Env vars: ROOMRANK_SEED, ROOMRANK_WORKERS
  3. Config file: $ROOMRANK_CONFIG or ~/.config/roomrank/config.json
  4. Built-in defaults (seed 42, one worker)

Also provides a status check for `roomrank config check`.
"""

import json
import logging
import os
import sys
from dataclasses import dataclass, field

CONFIG_DIR = os.path.expanduser("~/.config/roomrank")
CONFIG_PATH = os.path.join(CONFIG_DIR, "config.json")

DEFAULT_SEED = 42
DEFAULT_WORKERS = 1

ENV_SEED = "ROOMRANK_SEED"
ENV_WORKERS = "ROOMRANK_WORKERS"
ENV_CONFIG = "ROOMRANK_CONFIG"

SETTING_KEYS = ("seed", "workers")


class ConfigError(Exception):
    """Invalid run setting: unparsable value or out of range."""
    pass


@dataclass
class RunConfig:
    """Resolved settings for one CLI invocation."""

    command: str
    seed: int = DEFAULT_SEED
    workers: int = DEFAULT_WORKERS
    paths: dict = field(default_factory=dict)
    progress: bool = True
    sources: dict = field(default_factory=dict)


def _config_file_path(config_path=None):
    return config_path or os.environ.get(ENV_CONFIG) or CONFIG_PATH


def _load_from_file(config_path=None):
    """Load settings from the JSON config file.

    Returns:
        Dict restricted to known keys, or None if the file is missing or invalid.
    """
    path = _config_file_path(config_path)
    if not os.path.exists(path):
        return None
    try:
        with open(path, "r") as f:
            cfg = json.load(f)
    except (json.JSONDecodeError, PermissionError, OSError):
        return None
    if not isinstance(cfg, dict):
        return None
    return {k: cfg[k] for k in SETTING_KEYS if k in cfg}


def _load_from_env():
    """Load settings from ROOMRANK_* env vars. Returns dict (possibly empty)."""
    cfg = {}
    if os.environ.get(ENV_SEED):
        cfg["seed"] = os.environ[ENV_SEED]
    if os.environ.get(ENV_WORKERS):
        cfg["workers"] = os.environ[ENV_WORKERS]
    return cfg


def _parse_int(name, value, minimum=None):
    try:
        parsed = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if isinstance(value, float) and value != parsed:
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and parsed < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {parsed}")
    return parsed


def resolve_setting(name, flag_value=None, config_path=None):
    """Resolve one setting through the tiers.

    Args:
        name: "seed" or "workers".
        flag_value: Value given on the command line, or None.
        config_path: Override path for the config file tier.

    Returns:
        (value, source) where source is "flag", "env", "file" or "default".

    Raises:
        ConfigError if the winning tier holds an invalid value.
    """
    if name not in SETTING_KEYS:
        raise ConfigError(f"Unknown setting '{name}'")
    minimum = 1 if name == "workers" else None
    default = DEFAULT_SEED if name == "seed" else DEFAULT_WORKERS

    if flag_value is not None:
        return _parse_int(f"--{name}", flag_value, minimum), "flag"

    env = _load_from_env()
    if name in env:
        env_name = ENV_SEED if name == "seed" else ENV_WORKERS
        return _parse_int(env_name, env[name], minimum), "env"

    file_cfg = _load_from_file(config_path)
    if file_cfg and name in file_cfg:
        return _parse_int(f"{name} (config file)", file_cfg[name], minimum), "file"

    return default, "default"


def load_run_config(command, seed=None, workers=None, paths=None, progress=True,
                    config_path=None):
    """Build a RunConfig for a subcommand.

    Args:
        command: Subcommand name.
        seed: --seed flag value or None.
        workers: --workers flag value or None.
        paths: Dict of path arguments, kept for reference.
        progress: Whether progress bars are shown.
        config_path: Override path for the config file tier.

    Raises:
        ConfigError on invalid settings.
    """
    seed_value, seed_source = resolve_setting("seed", seed, config_path)
    workers_value, workers_source = resolve_setting("workers", workers, config_path)
    return RunConfig(
        command=command,
        seed=seed_value,
        workers=workers_value,
        paths=dict(paths or {}),
        progress=progress,
        sources={"seed": seed_source, "workers": workers_source},
    )


def configure_logging(verbose=False):
    """Route library logging to stderr with a bare message format."""
    level = logging.DEBUG if verbose else logging.INFO
    root = logging.getLogger("roomrank")
    root.setLevel(level)
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)
    else:
        # sys.stderr may have been swapped since the first call
        root.handlers[0].stream = sys.stderr
    root.propagate = False


def _package_version(module_name):
    try:
        module = __import__(module_name)
    except ImportError:
        return None
    return getattr(module, "__version__", "unknown")


def check_setup(config_path=None):
    """Report resolved settings and the numeric stack.

    Returns:
        Dict with settings (value + source), config file status, library versions, python.
    """
    status = {}

    settings = {}
    for name in SETTING_KEYS:
        try:
            value, source = resolve_setting(name, None, config_path)
            settings[name] = {"value": value, "source": source}
        except ConfigError as e:
            settings[name] = {"value": None, "source": None, "error": str(e)}
    status["settings"] = settings

    path = _config_file_path(config_path)
    status["config_file"] = {
        "path": path,
        "exists": os.path.exists(path),
        "valid": _load_from_file(config_path) is not None,
    }

    status["libraries"] = {
        name: {"version": _package_version(name)}
        for name in ("numpy", "scipy", "pandas", "tqdm", "librosa")
    }

    v = sys.version_info
    status["python"] = {
        "version": f"{v.major}.{v.minor}.{v.micro}",
        "sufficient": v >= (3, 10),
    }

    return status
