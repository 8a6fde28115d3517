"""Exception hierarchy shared by all gdrec modules."""


class GdrecError(Exception):
    """Base class for every error raised by this package."""


# seqio
class FastaError(GdrecError):
    pass


class AlignmentLengthError(FastaError):
    pass


class DuplicateLabelError(FastaError):
    pass


class ResidueError(FastaError):
    def __init__(self, symbol, position, label=None):
        self.symbol = symbol
        self.position = position
        self.label = label
        where = f" in {label!r}" if label is not None else ""
        super().__init__(f"illegal residue {symbol!r} at position {position}{where}")


class EmptyTrimError(GdrecError):
    pass


# gendist
class NoComparableSitesError(GdrecError):
    pass


class SaturationError(GdrecError):
    def __init__(self, message, pair=None):
        self.pair = pair
        if pair is not None:
            message = f"{message} (pair {pair[0]!r}, {pair[1]!r})"
        super().__init__(message)


class BootstrapDegenerateError(GdrecError):
    pass


class ReadSymmetryError(GdrecError):
    pass


# phylo
class NumericalError(GdrecError):
    pass


class NewickParseError(GdrecError):
    def __init__(self, message, position):
        self.position = position
        super().__init__(f"{message} at position {position}")


# embedspace
class DegenerateVectorError(GdrecError):
    pass


class ReferenceMismatchError(GdrecError):
    pass


class KMeansConfigError(GdrecError):
    pass


# neuralcore / recognet / dnadecode
class ShapeError(GdrecError):
    pass


class TapeError(GdrecError):
    pass


class TargetError(GdrecError):
    pass


class StageError(GdrecError):
    pass


class DataError(GdrecError):
    pass


# evalkit
class LabelError(GdrecError):
    pass


class MetricError(GdrecError):
    pass


# cli
class ConfigError(GdrecError):
    pass
