"""Exception hierarchy shared by every archforge module."""


class ArchforgeError(Exception):
    """Base class for all errors raised by archforge."""


class ContractError(ArchforgeError, ValueError):
    """A caller violated a precondition (shapes, ranges, stale state)."""


class ConfigError(ArchforgeError, ValueError):
    """An unknown option or an invalid combination of settings."""


class NumericalError(ArchforgeError, ArithmeticError):
    """A computation produced a non-finite value."""


class DivergenceError(NumericalError):
    """Training loss became non-finite."""


class DataError(ArchforgeError):
    """Dataset files are missing or unreadable."""


class IdxFormatError(DataError, ValueError):
    """Base class for IDX parse failures."""


class BadMagicError(IdxFormatError):
    pass


class TruncatedIdxError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass
