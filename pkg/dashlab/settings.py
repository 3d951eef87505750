"""Application settings.

Values come from (lowest to highest precedence) field defaults, ``DASHLAB_*``
environment variables or ``.env``, a YAML run configuration and explicit
overrides such as command-line flags.
"""
from pathlib import Path
from typing import Any, Dict, Optional, Union

import structlog
import yaml
from pydantic_settings import BaseSettings

from dashlab.errors import ParameterError

logger = structlog.get_logger()


class Settings(BaseSettings):
    """Run settings."""

    # Data generating process
    group_count: int = 1
    group_size: int = 2
    rho: float = 0.9
    extras: int = 0
    noise_sd: float = 1.0
    n_samples: int = 2000
    beta_mode: str = "symmetric"
    beta_base: float = 3.0
    beta_spread: float = 0.0
    seed: int = 0

    # Boosting
    rounds: int = 100
    max_depth: int = 1
    learning_rate: float = 0.1
    subsample: float = 0.8
    colsample: float = 1.0
    min_leaf: int = 1

    # Attribution
    background_size: int = 50
    background_seed: int = 1009
    eval_size: int = 200
    eval_seed: int = 2003

    # Diagnostics
    correlation_threshold: float = 0.5
    z_threshold: float = 1.96
    screen_models: int = 5
    confirm_models: int = 10
    resolve_models: int = 25
    borderline_low: float = 1.5
    borderline_high: float = 2.5
    n_resamples: int = 200

    # Runtime
    threads: int = 1
    log_level: str = "INFO"
    log_format: str = "console"
    disclosure_template: str = "templates/DISCLOSURE_TEMPLATE.md"

    class Config:
        env_prefix = "DASHLAB_"
        env_file = ".env"
        case_sensitive = False


def read_config_file(config_path: Union[str, Path]) -> Dict[str, Any]:
    """Read a YAML run configuration into a flat mapping.

    Top-level sections (``dgp:``, ``train:`` ...) are merged into one
    namespace; keys must be unique across sections and known to Settings.
    """
    path = Path(config_path)
    try:
        with open(path, "r", encoding="utf-8") as file:
            raw = yaml.safe_load(file) or {}
    except FileNotFoundError:
        raise FileNotFoundError(f"Configuration file {path} not found")
    except yaml.YAMLError as e:
        raise ParameterError(f"Invalid YAML in {path}: {e}")

    if not isinstance(raw, dict):
        raise ParameterError(f"Configuration file {path} must contain a mapping")

    flat: Dict[str, Any] = {}
    for key, value in raw.items():
        items = value.items() if isinstance(value, dict) else [(key, value)]
        for name, item in items:
            if name in flat:
                raise ParameterError(f"Duplicate configuration key {name!r} in {path}")
            flat[name] = item

    unknown = sorted(set(flat) - set(Settings.model_fields))
    if unknown:
        raise ParameterError(f"Unknown configuration keys in {path}: {', '.join(unknown)}")
    return flat


def load_settings(config_path: Optional[Union[str, Path]] = None, **overrides: Any) -> Settings:
    """Build Settings from env, an optional YAML file and explicit overrides.

    Overrides whose value is ``None`` are ignored so argparse namespaces can
    be passed through unchanged.
    """
    values: Dict[str, Any] = {}
    if config_path is not None:
        values.update(read_config_file(config_path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        loaded = Settings(**values)
    except ValueError as e:
        raise ParameterError(str(e))
    logger.debug("settings_loaded", config_path=str(config_path) if config_path else None,
                 overrides=sorted(k for k, v in overrides.items() if v is not None))
    return loaded


settings = Settings()
