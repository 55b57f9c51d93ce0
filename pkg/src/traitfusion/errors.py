"""Exception taxonomy shared by every traitfusion module."""


class TraitFusionError(Exception):
    """Base class for all library errors."""


class DimensionError(TraitFusionError, ValueError):
    """Tensor shapes or extents are incompatible with an operation."""


class ParameterError(TraitFusionError, ValueError):
    """A hyperparameter or configuration value is out of range."""


class DataError(TraitFusionError, ValueError):
    """Input data violates a format or domain invariant."""


class UsageError(TraitFusionError, RuntimeError):
    """An API was called in a state or with arguments it does not support."""
