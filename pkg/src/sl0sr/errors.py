"""Exception types shared across the package."""

import numpy as np


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when D D^T is not invertible (dictionary lacks full row rank)."""


class FormatError(ValueError):
    """Raised when an image or dictionary file cannot be parsed."""


class InvariantViolation(ValueError):
    """Raised when loaded or constructed data breaks a structural invariant."""


class DegenerateDataError(ValueError):
    """Raised when training data carries no usable structure."""


class ConfigurationError(ValueError):
    """Raised when dictionary and pipeline geometry disagree."""
