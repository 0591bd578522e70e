"""
Error hierarchy for curvesurvey.

Library code raises these; only the command-line layer turns them into exit codes.
"""

from typing import Any, Optional


class CurveSurveyError(Exception):
    """Base class for all curvesurvey errors."""
    pass


class DataError(CurveSurveyError):
    """Invalid input data, design or parameters."""
    pass


class ComputationError(CurveSurveyError):
    """A numerical procedure failed to produce a result."""
    pass


# curves
class GridMismatch(DataError):
    pass


class EmptySubset(DataError):
    pass


# population_io
class FormatError(DataError):
    pass


class ParseError(DataError):
    pass


class MissingData(DataError):
    pass


class SpecError(DataError):
    pass


class NotEnoughStrata(DataError):
    pass


# sampling / ht_estimator
class Infeasible(DataError):
    pass


class CensusUnit(DataError):
    pass


class DegenerateStratum(DataError):
    pass


class UnsupportedDesign(DataError):
    pass


# robust estimators
class EmptySample(DataError):
    pass


class UnsupportedExponent(DataError):
    pass


class DimensionError(DataError):
    pass


class SampleTooSmall(DataError):
    pass


# mse / simulation
class DesignError(DataError):
    pass


class TooFewReplicates(DataError):
    pass


class CovarianceError(DataError):
    pass


class RelativeBiasUndefined(DataError):
    pass


class ConvergenceFailure(ComputationError):
    """Iterative solver hit its iteration cap; the last iterate is kept."""

    def __init__(self, message: str, last_iterate: Optional[Any] = None):
        super().__init__(message)
        self.last_iterate = last_iterate
