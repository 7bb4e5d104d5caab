"""Exception hierarchy shared across the toolkit."""


class NMTError(Exception):
    """Base class for every domain error raised by zsnmt."""


class DimensionError(NMTError, ValueError):
    pass


class NonFiniteError(NMTError, FloatingPointError):
    pass


class LanguageError(NMTError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class SequenceError(NMTError, ValueError):
    pass


class ConfigError(NMTError, ValueError):
    pass


class CheckpointError(NMTError):
    pass


class EvaluationError(NMTError, ValueError):
    pass


class UsageError(NMTError):
    """Command-line misuse; maps to exit status 2."""
