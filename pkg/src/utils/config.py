import os
import json
from typing import Dict, Any, Optional, Tuple

import yaml
from dotenv import load_dotenv

from src.utils.errors import ConfigError

# Load environment variables from .env file
load_dotenv()

DEFAULT_CONFIG = {
    "app": {
        "name": "depthmotion",
        "version": "0.1.0",
        "debug": False,
        "out_dir": os.environ.get("DEPTHMOTION_OUT_DIR", "runs"),
        "progress": True,
    },
    "logging": {
        "level": os.environ.get("DEPTHMOTION_LOG_LEVEL", "INFO"),
    },
    "database": {
        "url": os.environ.get("DATABASE_URL", "sqlite:///depthmotion_runs.db"),
        "enable_persistence": os.environ.get("ENABLE_DB_PERSISTENCE", "false").lower() == "true",
    },
}

# Global configuration object
config: Dict[str, Any] = json.loads(json.dumps(DEFAULT_CONFIG))


def load_config(config_path: Optional[str] = None) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """Load a config file and merge its application sections into the global config.

    Returns the global config and the remaining (run-level) flat keys.
    """
    run_values: Dict[str, Any] = {}
    if not config_path:
        return config, run_values
    if not os.path.exists(config_path):
        raise ConfigError(f"Config file not found: {config_path}")

    flat = read_config_file(config_path)
    app_values: Dict[str, Any] = {}
    for key, value in flat.items():
        section = key.split(".", 1)[0]
        if "." in key and section in DEFAULT_CONFIG:
            app_values[key] = value
        else:
            run_values[key] = value

    for key, value in app_values.items():
        if get_config_value(key, _MISSING) is _MISSING:
            raise ConfigError(f"Unknown config key: {key}")
        set_config_value(key, value)
    return config, run_values


def read_config_file(config_path: str) -> Dict[str, Any]:
    """Read a config file into a flat dict of dotted keys.

    ``.json`` and ``.yaml``/``.yml`` files are flattened; anything else is parsed as
    ``key=value`` lines with ``#`` comments.
    """
    ext = os.path.splitext(config_path)[1].lower()
    try:
        with open(config_path, "r") as f:
            if ext == ".json":
                return _flatten(json.load(f) or {})
            if ext in (".yaml", ".yml"):
                return _flatten(yaml.safe_load(f) or {})
            return parse_key_value_lines(f.read(), source=config_path)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"Error loading config from {config_path}: {e}") from e


def parse_key_value_lines(text: str, source: str = "<string>") -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _coerce(value)
    return values


def _coerce(value: str) -> Any:
    lowered = value.lower()
    if lowered in ("true", "on", "yes"):
        return True
    if lowered in ("false", "off", "no"):
        return False
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def _flatten(data: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, prefix=f"{path}."))
        else:
            flat[path] = value
    return flat


def _merge_configs(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge two dictionaries"""
    for key, value in override.items():
        if key in base and isinstance(base[key], dict) and isinstance(value, dict):
            _merge_configs(base[key], value)
        else:
            base[key] = value
    return base


def reset_config() -> Dict[str, Any]:
    """Restore the global config to its defaults"""
    config.clear()
    _merge_configs(config, json.loads(json.dumps(DEFAULT_CONFIG)))
    return config


_MISSING = object()


def get_config_value(key_path: str, default: Any = None) -> Any:
    """Get a configuration value by dot-separated path"""
    keys = key_path.split('.')
    current = config

    for key in keys:
        if isinstance(current, dict) and key in current:
            current = current[key]
        else:
            return default

    return current


def set_config_value(key_path: str, value: Any) -> None:
    """Set a configuration value by dot-separated path"""
    keys = key_path.split('.')
    current = config

    for key in keys[:-1]:
        if key not in current:
            current[key] = {}
        current = current[key]

    current[keys[-1]] = value
