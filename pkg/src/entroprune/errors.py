"""Exception hierarchy shared across the package.

Every error carries the process exit code the CLI maps it to:
2 usage/validation, 3 no collapse detected, 4 data/format, 5 numeric.
"""


class EntropruneError(Exception):
    exit_code = 1


class ValidationError(EntropruneError, ValueError):
    """Bad parameters or inputs that violate an operation's contract."""

    exit_code = 2


class NoCollapseError(EntropruneError):
    """No entropy drop reached the detection threshold."""

    exit_code = 3


class DataError(EntropruneError):
    """External data could not be ingested (files, manifests)."""

    exit_code = 4


class NpyFormatError(DataError):
    """Malformed NPY magic, version, or header."""


class UnsupportedLayoutError(DataError):
    """Valid NPY file using a layout this tool does not read."""


class TruncationError(DataError):
    """NPY payload size disagrees with the declared shape."""


class ManifestError(DataError):
    """Activation dump manifest is malformed or inconsistent."""


class NumericError(EntropruneError):
    """Numerical failure: non-finite values, non-convergence, non-PSD input."""

    exit_code = 5


class DegenerateInputError(NumericError):
    """All tokens identical; no direction survives centering."""
