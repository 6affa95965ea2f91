import os
from typing import Dict, Optional

from dotenv import dotenv_values

from .errors import ConfigError
from .logging import get_logger
from .paths import expand_abs

log = get_logger("config")


def _find_upwards(start_dir: str, filename: str) -> Optional[str]:
    """Return first matching file found when walking up from start_dir.

    Running from a subdirectory (e.g. `tests/`) still finds the repository-level
    `.env`.
    """
    d = os.path.abspath(start_dir or ".")
    while True:
        candidate = os.path.join(d, filename)
        if os.path.isfile(candidate):
            return candidate
        parent = os.path.dirname(d)
        if parent == d:
            return None
        d = parent


def _read_dotenv(dotenv_dir: str) -> Dict[str, str]:
    """Return the key/value pairs of the nearest .env without touching os.environ."""
    path = _find_upwards(dotenv_dir, ".env")
    if not path:
        log.debug(f"No .env found starting from: {os.path.abspath(dotenv_dir)}")
        return {}
    values = {k: v.strip() for k, v in dotenv_values(path).items() if v is not None}
    log.debug(f"Loaded {len(values)} key(s) from .env at {path}")
    return values


def _lookup(key: str, dotenv_dir: str) -> Optional[str]:
    v = os.environ.get(key)
    if v:
        return v.strip()
    return _read_dotenv(dotenv_dir).get(key)


def load_threads(dotenv_dir: str = ".") -> int:
    """Thread cap for parallel sweeps: SEMIRES_THREADS, else the CPU count."""
    raw = _lookup("SEMIRES_THREADS", dotenv_dir)
    if not raw:
        return max(1, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError as e:
        raise ConfigError(f"SEMIRES_THREADS must be an integer, got {raw!r}") from e
    if n < 1:
        raise ConfigError(f"SEMIRES_THREADS must be >= 1, got {n}")
    return n


def load_output_root(dotenv_dir: str = ".", fallback: Optional[str] = None) -> Optional[str]:
    """Root directory for run outputs, from SEMIRES_OUTPUT_ROOT when set."""
    v = _lookup("SEMIRES_OUTPUT_ROOT", dotenv_dir)
    if v:
        return expand_abs(v)
    return fallback
