"""Utility-based rate adaptation for live HTTP streaming, with a trace-driven simulator."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, HalsimError  # noqa: F401
