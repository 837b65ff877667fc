"""Exception taxonomy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class ScamNetError(Exception):
    """Base class for all package errors."""


class ContractViolationError(ScamNetError):
    """An operation was called with arguments outside its contract."""


class ConfigError(ScamNetError):
    """Invalid or inconsistent configuration."""


class DataError(ScamNetError):
    """Malformed dataset directory, manifest, or tensor file."""


class NumericalError(ScamNetError):
    """A non-finite value appeared where the contract forbids one."""
