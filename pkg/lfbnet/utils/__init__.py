"""
Utils package for lfbnet.
Provides configuration and the shared exception types.
"""

from . import config
from .errors import LFBError, ShapeError, ConfigError, FormatError, DataError, UsageError

__all__ = ["config", "LFBError", "ShapeError", "ConfigError", "FormatError", "DataError", "UsageError"]
