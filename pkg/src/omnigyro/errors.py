"""Exception hierarchy.  Everything raised on purpose derives from GyroError."""


class GyroError(Exception):
    pass


class InvalidDimensionsError(GyroError, ValueError):
    pass


class LevelTooLargeError(GyroError, ValueError):
    pass


class MissingColorError(GyroError, ValueError):
    pass


class LensConfigError(GyroError, ValueError):
    pass


class EmptyHeatmapError(GyroError):
    pass


class DegenerateMeanError(GyroError):
    pass


class NoConsensusError(GyroError):
    pass


class DegenerateNormalError(GyroError, ValueError):
    pass


class GridMismatchError(GyroError, ValueError):
    pass


class DimensionsMismatchError(GyroError, ValueError):
    pass


class MissingReferenceError(GyroError, KeyError):
    pass


class GroundTruthError(GyroError, ValueError):
    """Bad ground-truth file; ``line`` is 1-based when known."""

    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
