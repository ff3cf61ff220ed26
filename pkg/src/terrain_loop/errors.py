"""Exception types shared across the pipeline stages."""


class TerrainLoopError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(TerrainLoopError):
    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at {offset})")
        self.offset = offset


class EmptyCloud(TerrainLoopError):
    pass


class NonFiniteValue(ParseError):
    pass


class DegenerateData(TerrainLoopError):
    pass


class NonConvergence(TerrainLoopError):
    """Optimizer stopped without converging; ``best`` holds the best-so-far result."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class FactorizationFailure(TerrainLoopError):
    pass


class RasterTooLarge(TerrainLoopError):
    pass


class DegenerateSample(TerrainLoopError):
    pass


class MissingPose(TerrainLoopError):
    pass


class UnlabeledPair(TerrainLoopError):
    pass


class NoOverlap(TerrainLoopError):
    pass


class DuplicateId(TerrainLoopError):
    pass


class UnknownId(TerrainLoopError):
    pass


class ConfigError(TerrainLoopError):
    pass
