"""Exception hierarchy.

Each top-level class maps to one CLI exit code (see ``stvgp.cli``).
"""


class StvgpError(Exception):
    exit_code = 1


class ConfigError(StvgpError, ValueError):
    """Invalid configuration, missing prior bindings, impossible sizes."""

    exit_code = 2


class DataError(StvgpError, ValueError):
    """Malformed input files, missing columns, unparseable rows."""

    exit_code = 3


class ShapeError(DataError):
    """Array arguments with incompatible dimensions."""


class DomainError(StvgpError, ValueError):
    """A value outside the domain of an operation (non-finite input, empty window)."""

    exit_code = 3


class NumericalError(StvgpError, ArithmeticError):
    """Cholesky failure after jitter escalation, non-finite SVGD direction."""

    exit_code = 4
