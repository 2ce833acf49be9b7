"""Exception types raised across the package."""


class HyperGCNError(Exception):
    """Base class for every error raised by hypergcn."""


class DataError(HyperGCNError):
    pass


class MagicMismatch(DataError):
    pass


class TruncatedFile(DataError):
    pass


class ShapeOverflow(DataError):
    pass


class NonFiniteData(DataError):
    pass


class LayoutMismatch(DataError):
    pass


class EmptySequence(DataError):
    pass


class ShapeMismatch(HyperGCNError, ValueError):
    pass


class IsolatedVertex(HyperGCNError, ValueError):
    pass


class KOutOfRange(HyperGCNError, ValueError):
    pass


class ChannelSplitError(HyperGCNError, ValueError):
    pass


class LabelOutOfRange(HyperGCNError, ValueError):
    pass


class EpochOutOfRange(HyperGCNError, ValueError):
    pass


class NonFiniteGradient(HyperGCNError, FloatingPointError):
    pass


class BoundaryDegeneracy(HyperGCNError):
    """Top-K selection sits too close to a tie for finite differences."""


class ConfigError(HyperGCNError, ValueError):
    pass


class CheckpointError(HyperGCNError):
    pass
