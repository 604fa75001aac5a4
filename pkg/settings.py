"""
Neyman Lab - Settings
Module-level defaults plus environment overrides for the CLI and HTTP API
"""
import logging
import os
import sys

from pydantic import BaseModel, Field, field_validator

SPEC_VERSION = "1.0"

# Exact enumeration walks 2^T paths
ENUMERATION_CAP = 20

# Explore-then-Commit never commits closer to the boundary than this
ETC_MIN_PROB = 0.01

DEFAULT_REPLICATIONS = 2000
DEFAULT_LEVELS = (0.05, 0.1)
DEFAULT_CHUNK = 512

THREADS_ENV = "NEYMAN_LAB_THREADS"
LOG_LEVEL_ENV = "NEYMAN_LAB_LOG_LEVEL"
CHUNK_ENV = "NEYMAN_LAB_CHUNK"


class Settings(BaseModel):
    """Runtime knobs resolved from the environment"""
    threads: int = Field(default=1, ge=1)
    log_level: str = "INFO"
    chunk: int = Field(default=DEFAULT_CHUNK, ge=1)

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        value = value.upper()
        # getLevelNamesMapping() is 3.11+; it returns a copy of _nameToLevel.
        names = getattr(logging, "getLevelNamesMapping", lambda: dict(logging._nameToLevel))()
        if value not in names:
            raise ValueError(f"unknown log level: {value}")
        return value


def load_settings(threads: int | None = None) -> Settings:
    """
    Resolve settings: explicit argument > environment variable > default.

    Args:
        threads: Thread count from a CLI flag, if given

    Returns:
        Validated Settings
    """
    if threads is None:
        env_threads = os.environ.get(THREADS_ENV)
        threads = int(env_threads) if env_threads else (os.cpu_count() or 1)

    return Settings(
        threads=threads,
        log_level=os.environ.get(LOG_LEVEL_ENV, "INFO"),
        chunk=int(os.environ.get(CHUNK_ENV, DEFAULT_CHUNK)),
    )


def configure_logging(level: str = "INFO") -> None:
    """Install a single stderr handler; stdout is reserved for JSON/CSV output"""
    root = logging.getLogger()
    root.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level)
