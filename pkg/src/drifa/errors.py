"""Exception hierarchy shared by every drifa module."""


class DrifaError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(DrifaError, ValueError):
    pass


class InvalidRate(DrifaError, ValueError):
    pass


class LabelOutOfRange(DrifaError, ValueError):
    pass


class GraphConsumed(DrifaError, RuntimeError):
    """Raised when backward() is called twice on the same graph."""


class MissingGrad(DrifaError, RuntimeError):
    pass


class WeightCountMismatch(DrifaError, ValueError):
    pass


class ConfigMismatch(DrifaError, ValueError):
    """Model configuration and input batch disagree."""


class InvalidTaskOrClass(DrifaError, ValueError):
    pass


class LengthMismatch(DrifaError, ValueError):
    pass


class InvalidSpec(DrifaError, ValueError):
    pass


class NonSquareRotation(DrifaError, ValueError):
    pass


class BadFractions(DrifaError, ValueError):
    pass


class ConfigError(DrifaError, ValueError):
    """Run configuration could not be parsed or validated."""


class DataNotFound(DrifaError, FileNotFoundError):
    pass


class CheckpointCorrupt(DrifaError, ValueError):
    pass


class InvalidFlag(DrifaError, ValueError):
    pass
