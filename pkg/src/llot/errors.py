"""Exception hierarchy.

Errors split into two families so the CLI can map them onto exit codes:
``DataError`` (bad or inconsistent inputs, exit 3) and ``SolverError``
(numerical failures, exit 4).
"""


class LlotError(Exception):
    """Base class for every error raised by this package."""


class DataError(LlotError):
    pass


class SolverError(LlotError):
    pass


class ParseError(DataError):
    def __init__(self, path, line, column, message):
        self.path = str(path)
        self.line = line
        self.column = column
        super().__init__(f"{path}:{line}:{column}: {message}")


class RaggedRows(DataError):
    pass


class DuplicateId(DataError):
    pass


class MissingSpot(DataError):
    pass


class MissingCell(DataError):
    pass


class EmptyIntersection(DataError):
    pass


class DuplicateGene(DataError):
    pass


class AllGenesFiltered(DataError):
    pass


class UnknownGene(DataError):
    pass


class UnknownCell(DataError):
    pass


class MissingCellTypes(DataError):
    pass


class LengthMismatch(DataError, ValueError):
    pass


class CorruptModel(DataError):
    pass


class KTooLarge(DataError, ValueError):
    pass


class NonFiniteCost(SolverError):
    pass


class MarginalMismatch(SolverError):
    pass


class GammaOutOfRange(SolverError, ValueError):
    pass


class MemoryBudgetExceeded(SolverError):
    pass


class DegenerateGene(UserWarning):
    """A shared gene has (near) zero variance; a fallback estimate was used."""


class SlowConvergence(UserWarning):
    pass


class NotConverged(UserWarning):
    pass
