"""Exception types shared across the package."""


class SeddError(Exception):
    """Base class for all package errors."""


class ArgumentError(SeddError, ValueError):
    """An argument is outside the operation's domain."""


class DomainError(ArgumentError):
    """A loss or score was evaluated outside its mathematical domain."""


class CapacityError(SeddError):
    """An enumerated state space is too large for the brute-force path."""


class UndefinedScoreError(SeddError):
    """A concrete score ratio has a zero denominator."""


class InstabilityError(SeddError):
    """Numerical integration produced probabilities that are too negative."""


class SamplerError(SeddError):
    """A reverse step produced a degenerate distribution."""


class ConfigError(SeddError):
    """A run or sampler configuration is invalid."""


class NumericalAbort(SeddError):
    """Training hit a non-finite loss."""


class IngestionError(SeddError):
    """Text contained characters outside the vocabulary."""


class CheckpointError(SeddError):
    """Base class for checkpoint load failures."""


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass
