"""Error types shared across the package.

Only two custom exception classes exist; everything else raises the usual
builtins (ValueError for bad arguments, OSError for file trouble).
"""


class FormatError(Exception):
    """A file or byte stream does not conform to its expected format."""


class NumericError(Exception):
    """A numeric invariant was violated at runtime (NaN loss, bad gradient)."""
