"""Exception hierarchy shared by the pipeline stages."""


class EmojiTransferError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EmojiTransferError):
    """An experiment or module configuration is invalid."""


class DataError(EmojiTransferError):
    """Input data violates a precondition (bad rows, empty splits, ...)."""


class UnknownLanguageError(DataError, KeyError):
    """A language tag has no configured resource (e.g. slur lexicon)."""

    def __str__(self) -> str:
        return Exception.__str__(self)
