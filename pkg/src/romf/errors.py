"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes, so raising the right class
matters more than the message wording.
"""


class ShapeError(ValueError):
    """Array dimensions disagree with what an operation requires."""


class ConfigError(ValueError):
    """A configuration value is invalid or internally inconsistent."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or cannot be bracketed."""


class StateError(RuntimeError):
    """Operation called out of order, e.g. backward before forward."""


class MissingArtifactError(FileNotFoundError):
    """A required upstream file (dataset, checkpoint) does not exist."""


class DataMismatchError(ValueError):
    """Two artifacts that must align (prediction vs truth) do not."""


class MetricError(ValueError):
    """Metric undefined for the given inputs, e.g. zero-norm reference."""
