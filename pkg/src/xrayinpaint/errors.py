"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit-code classes, so new exceptions
should subclass one of the three families below.
"""


class XrayInpaintError(Exception):
    """Base class for all package errors."""


class ConfigError(XrayInpaintError):
    """Invalid configuration: bad values, unknown keys, geometry mismatch."""


class DataError(XrayInpaintError):
    """Problems with input data or derived artifacts."""


class BoundsError(DataError):
    """A rectangle falls outside its containing raster."""


class ShapeError(DataError):
    """Array dimensions do not match what the operation requires."""


class ParseError(DataError):
    """Malformed manifest / annotation input."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CapacityError(DataError):
    """A split request exceeds what the data can provide."""


class SamplingError(DataError):
    """Patch sampling could not satisfy its constraints."""


class StoreError(DataError):
    """Patch store is corrupt, incompatible, or incomplete."""


class TrainingError(XrayInpaintError):
    """Training diverged or could not proceed."""


class AttentionError(XrayInpaintError):
    """Contextual attention has no usable background to draw from."""


class StudyError(XrayInpaintError):
    """Observer-study service errors (sequencing, conflicts, state)."""
