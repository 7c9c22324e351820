"""Exception types shared across the package.

Plain ``ValueError`` is reserved for violations of in-library contracts
(shape mismatches, bad arguments).  The classes below mark conditions the
command-line layer maps to distinct exit codes.
"""


class ConfigError(Exception):
    """A run configuration is malformed or internally inconsistent."""


class DataError(Exception):
    """An input file is missing, truncated, or violates its format."""


class NumericalError(Exception):
    """A numerical guarantee failed (divergence, non-finite gradients)."""
