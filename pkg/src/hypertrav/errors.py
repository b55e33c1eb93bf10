"""Exception types raised across the pipeline."""


class HyperTravError(Exception):
    """Base class for all package errors."""


class DegenerateCloud(HyperTravError):
    pass


class WindowOutOfRange(HyperTravError):
    pass


class ShapeMismatch(HyperTravError):
    pass


class SizeMismatch(HyperTravError):
    pass


class GraphError(HyperTravError):
    pass


class MissingGrad(HyperTravError):
    pass


class EmptyPositiveSet(HyperTravError):
    pass


class EmptyDistanceSet(HyperTravError):
    pass


class TooFewSamples(HyperTravError):
    pass


class MissingLabels(HyperTravError):
    pass


class SpecError(HyperTravError):
    pass


class NoPathError(HyperTravError):
    pass


class CheckpointError(HyperTravError):
    """Unreadable or version-incompatible checkpoint."""


class NumericFailure(HyperTravError):
    """Non-finite loss encountered during training."""


class DataError(HyperTravError):
    """Malformed or missing dataset files."""
