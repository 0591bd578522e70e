"""
Discretized curve data on a common time grid.

Every other module works with these types: a TimeGrid carrying quadrature weights,
single Curves, and a CurvePopulation whose curve values are held as an (N, D) array.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional

import numpy as np

from .exceptions import EmptySubset, GridMismatch, SpecError

logger = logging.getLogger(__name__)

QUADRATURE_MODES = ("trapezoid", "unit")


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Ordered measurement instants with the quadrature weights used for inner products."""

    points: np.ndarray
    quad_weights: np.ndarray
    mode: str = "trapezoid"

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        weights = np.asarray(self.quad_weights, dtype=float)
        if points.ndim != 1 or points.size < 2:
            raise SpecError("a time grid needs at least two points")
        if np.any(np.diff(points) <= 0):
            raise SpecError("grid points must be strictly increasing")
        if weights.shape != points.shape:
            raise SpecError("one quadrature weight per grid point is required")
        if np.any(weights <= 0):
            raise SpecError("quadrature weights must be positive")
        object.__setattr__(self, "points", _frozen(points.copy()))
        object.__setattr__(self, "quad_weights", _frozen(weights.copy()))

    @classmethod
    def uniform(cls, D: int, mode: str = "trapezoid", start: float = 0.0, step: float = 1.0) -> "TimeGrid":
        """Equi-spaced grid of D points; trapezoid weights sum to T, unit weights sum to D."""
        if mode not in QUADRATURE_MODES:
            raise SpecError(f"quadrature mode must be one of {QUADRATURE_MODES}")
        if D < 2:
            raise SpecError("a time grid needs at least two points")
        points = start + step * np.arange(D, dtype=float)
        if mode == "unit":
            weights = np.ones(D)
        else:
            weights = np.full(D, step)
            weights[0] = weights[-1] = step / 2.0
        return cls(points=points, quad_weights=weights, mode=mode)

    @property
    def D(self) -> int:
        return int(self.points.size)

    @property
    def T(self) -> float:
        return float(self.points[-1] - self.points[0])

    def same_as(self, other: "TimeGrid") -> bool:
        return self is other or (
            self.D == other.D
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.quad_weights, other.quad_weights)
        )

    def inner(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Quadrature inner product along the last axis (broadcasts over leading axes)."""
        return np.sum(self.quad_weights * np.asarray(a) * np.asarray(b), axis=-1)

    def norm(self, a: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum(self.inner(a, a), 0.0))


@dataclass(frozen=True, eq=False)
class Curve:
    """One discretized curve Y_i(t_1..t_D)."""

    values: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.D,):
            raise GridMismatch(f"curve has {values.size} values, grid has {self.grid.D} points")
        if not np.all(np.isfinite(values)):
            raise SpecError("curve values must be finite")
        object.__setattr__(self, "values", _frozen(values.copy()))

    def __len__(self) -> int:
        return self.grid.D

    def scaled(self, alpha: float) -> "Curve":
        return Curve(alpha * self.values, self.grid)


@dataclass(frozen=True, eq=False)
class CurvePopulation:
    """N curves on one grid, with optional stratum labels (1..H) and auxiliary scalars."""

    values: np.ndarray
    grid: TimeGrid
    stratum: Optional[np.ndarray] = None
    auxiliary: Optional[np.ndarray] = None
    name: str = field(default="population", compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1:
            raise SpecError("a population needs at least one curve")
        if values.shape[1] != self.grid.D:
            raise GridMismatch(f"curves have {values.shape[1]} points, grid has {self.grid.D}")
        if not np.all(np.isfinite(values)):
            raise SpecError("population curves must be finite")
        object.__setattr__(self, "values", _frozen(values.copy()))
        if self.stratum is not None:
            labels = np.asarray(self.stratum)
            if labels.shape != (values.shape[0],):
                raise SpecError("one stratum label per unit is required")
            if not np.all(labels == np.round(labels)) or labels.min() < 1:
                raise SpecError("stratum labels must be positive integers")
            object.__setattr__(self, "stratum", _frozen(labels.astype(int)))
        if self.auxiliary is not None:
            aux = np.asarray(self.auxiliary, dtype=float)
            if aux.shape != (values.shape[0],):
                raise SpecError("one auxiliary value per unit is required")
            object.__setattr__(self, "auxiliary", _frozen(aux.copy()))

    @property
    def N(self) -> int:
        return int(self.values.shape[0])

    @property
    def D(self) -> int:
        return self.grid.D

    @property
    def strata_labels(self) -> List[int]:
        if self.stratum is None:
            return []
        return sorted(int(h) for h in np.unique(self.stratum))

    @property
    def H(self) -> int:
        return len(self.strata_labels)

    def stratum_sizes(self) -> dict:
        if self.stratum is None:
            return {}
        labels, counts = np.unique(self.stratum, return_counts=True)
        return {int(h): int(c) for h, c in zip(labels, counts)}

    def curve(self, i: int) -> Curve:
        return Curve(self.values[i], self.grid)

    @property
    def curves(self) -> List[Curve]:
        return [self.curve(i) for i in range(self.N)]

    def with_strata(self, stratum: np.ndarray) -> "CurvePopulation":
        return CurvePopulation(self.values, self.grid, stratum, self.auxiliary, self.name)

    def same_as(self, other: "CurvePopulation") -> bool:
        def _eq(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(a, b)

        return (
            self.grid.same_as(other.grid)
            and np.array_equal(self.values, other.values)
            and _eq(self.stratum, other.stratum)
            and _eq(self.auxiliary, other.auxiliary)
        )


def _check_same_grid(a: Curve, b: Curve) -> None:
    if not a.grid.same_as(b.grid):
        raise GridMismatch("curves live on different time grids")


def inner_product(a: Curve, b: Curve) -> float:
    """Quadrature approximation of the integral of a(t)b(t)."""
    _check_same_grid(a, b)
    return float(a.grid.inner(a.values, b.values))


def l2_norm(a: Curve) -> float:
    return float(np.sqrt(max(inner_product(a, a), 0.0)))


def population_total(pop: CurvePopulation) -> Curve:
    return Curve(pop.values.sum(axis=0), pop.grid)


def population_mean(pop: CurvePopulation, subset: Optional[Iterable[int]] = None) -> Curve:
    """Pointwise mean over `subset` (unit indices), or over the whole population."""
    if subset is None:
        return Curve(pop.values.mean(axis=0), pop.grid)
    index = np.asarray(list(subset), dtype=int)
    if index.size == 0:
        raise EmptySubset("cannot average over an empty set of units")
    return Curve(pop.values[index].mean(axis=0), pop.grid)

