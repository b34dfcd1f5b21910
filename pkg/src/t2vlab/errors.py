"""Exception types shared across the package.

Each class maps one failure category surfaced by the public API, so callers
(and tests) can distinguish e.g. a bad tensor shape from a bad parameter
value without parsing messages.
"""


class ShapeError(ValueError):
    """Tensor shapes do not match what the operation requires."""


class ParameterError(ValueError):
    """A scalar argument (timestep, count, range) is out of its domain."""


class ConfigError(ValueError):
    """A configuration document is malformed or inconsistent."""


class VocabularyError(ValueError):
    """A caption contains a word outside the closed vocabulary."""


class StateError(RuntimeError):
    """The object is not in the state the operation requires."""


class NumericError(ArithmeticError):
    """A numeric degeneracy: zero norms, non-finite losses, NaN tensors."""


class DegenerateSampleError(ValueError):
    """A statistical test received a sample it cannot score (e.g. constant)."""


class ClipSpecError(ValueError):
    """A synthetic clip specification cannot be rendered inside the frame."""


class IngestionError(ValueError):
    """A dataset manifest or its referenced files are unusable."""


class IntegrityError(RuntimeError):
    """A checkpoint or tensor file is missing, truncated, or corrupt."""
