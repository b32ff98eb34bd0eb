"""Exception types shared across the simulator."""


class PrismError(Exception):
    """Base class for all simulator errors."""


class UnknownVip(PrismError):
    """A packet or operation referenced a VIP address that is not registered."""


class EmptyTable(PrismError):
    """ECMP hashing was attempted against a zero-length table."""


class TooSmall(PrismError):
    """Requested ECMP table length cannot hold the DIP pool."""


class PoolWouldBeEmpty(PrismError):
    """Taking down the last DIP of a pool is not allowed."""


class AlreadyPresent(PrismError):
    """The DIP being added is already a member of the pool."""


class CapacityExceeded(PrismError):
    """ECMP table expansion would exceed the configured maximum length."""


class InsufficientBins(PrismError):
    """More bins were requested from a selection than candidates exist."""


class NoConvergence(PrismError):
    """Migration analysis requires the copy rate to exceed the arrival rate."""


class DomainError(PrismError):
    """An analysis formula was evaluated outside its domain."""


class MctOverflow(PrismError):
    """The migrated-connection table filled up mid-update; the run is invalid."""


class ConfigError(PrismError):
    """A scenario file could not be parsed.

    Carries the offending line number when one is known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
