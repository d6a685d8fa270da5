"""Exception hierarchy shared across the package."""


class C3Error(Exception):
    """Base class for package errors."""


class DimensionError(C3Error, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class NumericalError(C3Error, FloatingPointError):
    """A NaN or Inf showed up where only finite values are allowed."""


class StateError(C3Error, RuntimeError):
    """An optimizer or model was used in an invalid state."""


class DataFormatError(C3Error, ValueError):
    """A dataset file is missing, malformed, or internally inconsistent."""


class SamplingError(C3Error, ValueError):
    """Negative sampling could not satisfy the request."""
