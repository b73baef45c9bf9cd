"""
Settings for resilient-tasks
Loads environment variables (optionally from a .env file) and sets up logging
"""

import logging
import os
import sys
from dataclasses import dataclass
from typing import Optional

from dotenv import find_dotenv, load_dotenv

from resil.errors import ConfigError


LOG_FORMAT = '[%(name)s] %(message)s'

_settings = None


@dataclass(frozen=True)
class Settings:
    """Process-wide settings read from the environment."""

    seed: Optional[int] = None  # RESIL_SEED, overrides --seed
    workers: Optional[int] = None  # RESIL_WORKERS, default pool size
    log_level: str = 'INFO'  # RESIL_LOG_LEVEL
    run_slow: bool = False  # RESIL_RUN_SLOW, enables timing-bound tests


def _int_from_env(name):
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return None
    try:
        return int(raw.strip())
    except ValueError:
        raise ConfigError(name, f"expected an integer, got {raw!r}")


def load_settings(reload=False):
    """
    Read settings from the environment once.

    A .env file in the working directory is loaded first; variables already
    present in the environment win over the file.
    """
    global _settings

    if _settings is not None and not reload:
        return _settings

    load_dotenv(find_dotenv(usecwd=True))

    workers = _int_from_env('RESIL_WORKERS')
    if workers is not None and workers < 1:
        raise ConfigError('RESIL_WORKERS', f"must be >= 1, got {workers}")

    level = os.getenv('RESIL_LOG_LEVEL', 'INFO').strip().upper()
    if level not in getattr(logging, 'getLevelNamesMapping', lambda: logging._nameToLevel)():
        raise ConfigError('RESIL_LOG_LEVEL', f"unknown level {level!r}")

    _settings = Settings(
        seed=_int_from_env('RESIL_SEED'),
        workers=workers,
        log_level=level,
        run_slow=os.getenv('RESIL_RUN_SLOW', '').strip().lower() in ('1', 'true', 'yes'),
    )
    return _settings


def default_workers():
    """Worker count used when nothing else is configured."""
    settings = load_settings()
    if settings.workers:
        return settings.workers
    return os.cpu_count() or 1


def configure_logging(level=None):
    """Install one stream handler with the bracket-tag format."""
    if level is None:
        level = load_settings().log_level

    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, '_resil', False):
            root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._resil = True
    root.addHandler(handler)
    root.setLevel(level)
