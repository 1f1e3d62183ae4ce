"""Exception hierarchy shared by every subpackage."""


class FedXGBError(Exception):
    """Base class for all library errors."""


class DimensionError(FedXGBError, ValueError):
    """Operands have incompatible shapes or lengths."""


class NumericDomainError(FedXGBError, ValueError):
    """A formula was evaluated outside its domain (e.g. non-positive denominator)."""


class ParameterError(FedXGBError, ValueError):
    """A hyperparameter or argument violates its documented range."""


class CapacityError(FedXGBError):
    """The null space is too small for the requested number of kernel vectors."""


class RoutingError(FedXGBError):
    """An instance could not be routed through a tree."""


class ProtocolError(FedXGBError):
    """A federated protocol run was aborted."""


class PhaseViolation(ProtocolError):
    """A message was sent or received outside the phase that allows it."""


class LeakRefusal(ProtocolError):
    """The active party refused to answer because the mask would expose rows."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = tuple(rows)


class ConfigError(FedXGBError, ValueError):
    """Invalid run configuration."""


class DataError(FedXGBError, ValueError):
    """A dataset file is malformed: missing columns, duplicate ids, bad rows."""
