"""Exception hierarchy shared across the toolkit."""


class TlpError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(TlpError, ValueError):
    """A constructor or operation argument is outside its allowed range."""


class DomainError(TlpError, ValueError):
    """An input is outside the mathematical domain of the operation."""


class UndefinedConditionalError(DomainError):
    """A conditional expectation was requested on a probability-zero event."""


class PhaseError(TlpError, RuntimeError):
    """An operation was attempted in the wrong oracle phase."""


class PolicyError(TlpError, ValueError):
    """A request violates a protocol policy limit (e.g. the LTV ceiling)."""


class StateError(TlpError, RuntimeError):
    """A lifecycle operation was applied to a position in the wrong state."""


class MarketError(TlpError, RuntimeError):
    """The stablecoin market could not be cleared."""


class DataError(TlpError, ValueError):
    """An input file failed validation."""
