"""Exception hierarchy shared across the package.

The CLI maps these onto exit-code categories: config errors exit 2,
numerical errors exit 3, i/o errors exit 4.
"""


class GossipSimError(Exception):
    """Base class for all package errors."""


class ConfigError(GossipSimError):
    """Invalid configuration file, key, or value range."""


class InvalidInputError(GossipSimError):
    """An operation received an argument outside its domain."""


class NumericalOverflowError(GossipSimError):
    """Non-finite values appeared during local training.

    Carries the batch index at which the overflow was first observed.
    """

    def __init__(self, message: str, batch_index: int | None = None):
        super().__init__(message)
        self.batch_index = batch_index


class CausalityViolationError(GossipSimError):
    """An event was scheduled earlier than the replay clock."""


class InvalidGeometryError(GossipSimError):
    """Degenerate node geometry (e.g. coincident transmitter/receiver)."""


class CorruptMessageError(GossipSimError):
    """A received payload does not match the model dimension."""


class InvalidInstanceError(GossipSimError):
    """A verification instance violates the hypothesis of its check."""
