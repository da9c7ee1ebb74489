"""Exception hierarchy shared by all qchom modules."""


class QchomError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(QchomError):
    """An argument violates a documented precondition (dimension mismatch,
    non-SPD coefficient, malformed descriptor, ...)."""


class MapValidationError(QchomError):
    """A cut-and-project map failed (or was never run through) the
    diophantine gate, so operations that need unique ergodic means refuse."""


class UnsupportedDemoError(InvalidInputError):
    """A demo was requested for dimensions it does not support."""


class ConfigError(InvalidInputError):
    """A run configuration is malformed; the message names the offending key."""


class InternalError(QchomError):
    """An internal consistency check failed (e.g. non-monotone energy in a
    descent that enforces decrease); indicates a bug, not bad input."""
