"""
Runtime settings for the expectile solver
Defaults, overridden by expectile.toml, then by environment variables (.env honoured)
"""

import logging
import os
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, Optional

import toml
from dotenv import load_dotenv

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = 'expectile.toml'
CONFIG_ENV = 'EXPECTILE_CONFIG'

# section -> keys accepted in the TOML file
SECTIONS = {
    'solver': ('epsilon', 'clip_m', 'max_iter', 'debug', 'debug_interval', 'log_every'),
    'kernel': ('full_matrix_max_n', 'cache_rows'),
    'experiment': ('folds', 'seed', 'threads', 'delimiter', 'knn', 'refit_gamma'),
    'logging': ('log_file',),
}

ENV_OVERRIDES = {
    'EXPECTILE_FULL_MATRIX_MAX_N': 'full_matrix_max_n',
    'EXPECTILE_CACHE_ROWS': 'cache_rows',
    'EXPECTILE_MAX_ITER': 'max_iter',
    'EXPECTILE_THREADS': 'threads',
    'EXPECTILE_LOG_FILE': 'log_file',
}


@dataclass(frozen=True)
class Settings:
    """Resolved configuration; CLI flags are applied on top with `override`"""
    epsilon: float = 1e-3
    clip_m: float = 1.0
    max_iter: int = 10_000_000
    debug: bool = False
    debug_interval: int = 1000
    log_every: int = 100_000
    full_matrix_max_n: int = 8000
    cache_rows: int = 2000
    folds: int = 5
    seed: int = 0
    threads: int = 1
    delimiter: str = "\t"
    knn: int = 15
    refit_gamma: str = "scaled"
    log_file: Optional[str] = None

    def __post_init__(self):
        if self.refit_gamma not in ('scaled', 'raw'):
            raise ValueError(f"refit_gamma must be 'scaled' or 'raw', got {self.refit_gamma!r}")
        if self.folds < 2:
            raise ValueError(f"folds must be >= 2, got {self.folds}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        if not self.delimiter:
            raise ValueError("delimiter must not be empty")

    def override(self, **values: Any) -> "Settings":
        """Copy with the given non-None values applied"""
        return replace(self, **{k: _coerce(k, v) for k, v in values.items() if v is not None})


_TYPES = {f.name: f.type for f in fields(Settings)}


def _coerce(name: str, value: Any) -> Any:
    """Convert a TOML or environment value to the field's type; ValueError when it does not fit"""
    kind = _TYPES.get(name)
    if kind is None:
        raise ValueError(f"unknown setting {name!r}")
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ('1', 'true', 'yes', 'on'):
                return True
            if text in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(value)
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ValueError(f"setting {name!r} has an invalid value {value!r}")


def _config_path(explicit: Optional[str]) -> Optional[str]:
    if explicit:
        if not os.path.exists(explicit):
            raise FileNotFoundError(f"config file not found at {explicit}")
        return explicit
    from_env = os.getenv(CONFIG_ENV)
    if from_env:
        if not os.path.exists(from_env):
            raise FileNotFoundError(f"config file not found at {from_env} (from ${CONFIG_ENV})")
        return from_env
    if os.path.exists(DEFAULT_CONFIG_FILE):
        return DEFAULT_CONFIG_FILE
    return None


def _values_from_toml(document: Dict[str, Any], path: str) -> Dict[str, Any]:
    values = {}
    for section, entries in document.items():
        if section not in SECTIONS or not isinstance(entries, dict):
            logger.warning(f"⚠️ {path}: ignoring unknown section [{section}]")
            continue
        for key, value in entries.items():
            if key not in SECTIONS[section]:
                logger.warning(f"⚠️ {path}: ignoring unknown key '{key}' in [{section}]")
                continue
            values[key] = _coerce(key, value)
    return values


def load_settings(config_path: Optional[str] = None, use_dotenv: bool = True) -> Settings:
    """
    Resolve the settings

    Args:
        config_path: Explicit TOML file; falls back to $EXPECTILE_CONFIG, then ./expectile.toml
        use_dotenv: Read a .env file into the environment first

    Returns:
        Settings with file and environment overrides applied
    """
    if use_dotenv:
        load_dotenv()

    values: Dict[str, Any] = {}
    path = _config_path(config_path)
    if path is not None:
        try:
            with open(path) as f:
                document = toml.load(f)
        except toml.TomlDecodeError as e:
            raise ValueError(f"{path} is not valid TOML: {e}")
        values.update(_values_from_toml(document, path))
        logger.debug(f"Loaded settings from {path}")

    for env_name, key in ENV_OVERRIDES.items():
        raw = os.getenv(env_name)
        if raw is not None and raw != '':
            values[key] = _coerce(key, raw)

    return Settings(**values)
