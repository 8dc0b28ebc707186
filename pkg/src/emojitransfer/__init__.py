"""Emoji distant supervision and source-to-target transfer toolkit."""

from emojitransfer.errors import ConfigError, DataError, EmojiTransferError, UnknownLanguageError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "EmojiTransferError",
    "UnknownLanguageError",
    "__version__",
]
