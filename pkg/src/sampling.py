"""
Fixed-size sampling designs: simple random sampling without replacement (SRS) and
stratified SRS (STR), with exact first- and second-order inclusion probabilities.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional

import numpy as np

from .curves import CurvePopulation
from .exceptions import Infeasible, UnsupportedDesign

logger = logging.getLogger(__name__)

SRS = "srs"
STR = "str"
ENUMERATION_MAX_N = 12


@dataclass(frozen=True, eq=False)
class Design:
    """A fixed-size design over units 0..N-1."""

    kind: str
    N: int
    n: int
    stratum: Optional[np.ndarray] = None
    allocation: Optional[Dict[int, int]] = None

    @classmethod
    def srs(cls, N: int, n: int) -> "Design":
        if N < 1:
            raise Infeasible("population size must be positive")
        if not 1 <= n <= N:
            raise Infeasible(f"SRS needs 1 <= n <= N, got n={n}, N={N}")
        return cls(kind=SRS, N=int(N), n=int(n))

    @classmethod
    def stratified(cls, stratum: np.ndarray, allocation: Dict[int, int]) -> "Design":
        labels = np.asarray(stratum, dtype=int)
        sizes = {int(h): int(c) for h, c in zip(*np.unique(labels, return_counts=True))}
        allocation = {int(h): int(v) for h, v in allocation.items()}
        if set(allocation) != set(sizes):
            raise Infeasible(f"allocation strata {sorted(allocation)} do not match population strata {sorted(sizes)}")
        for h, n_h in allocation.items():
            if not 2 <= n_h <= sizes[h]:
                raise Infeasible(f"stratum {h}: need 2 <= n_h <= N_h, got n_h={n_h}, N_h={sizes[h]}")
        labels = labels.copy()
        labels.setflags(write=False)
        return cls(kind=STR, N=int(labels.size), n=sum(allocation.values()), stratum=labels,
                   allocation=dict(sorted(allocation.items())))

    @property
    def is_stratified(self) -> bool:
        return self.kind == STR

    @property
    def strata(self) -> List[int]:
        return list(self.allocation) if self.is_stratified else []

    def stratum_size(self, h: int) -> int:
        return int(np.count_nonzero(self.stratum == h))

    def stratum_units(self, h: int) -> np.ndarray:
        return np.flatnonzero(self.stratum == h)

    def first_order(self) -> np.ndarray:
        """pi_i for every population unit."""
        if not self.is_stratified:
            return np.full(self.N, self.n / self.N)
        pi = np.empty(self.N)
        for h, n_h in self.allocation.items():
            units = self.stratum_units(h)
            pi[units] = n_h / units.size
        return pi

    def same_stratum_joint(self) -> np.ndarray:
        """pi_ij for two distinct units of the unit's own stratum (or of the whole population under SRS)."""
        if not self.is_stratified:
            return np.full(self.N, _pair_prob(self.N, self.n))
        joint = np.empty(self.N)
        for h, n_h in self.allocation.items():
            units = self.stratum_units(h)
            joint[units] = _pair_prob(units.size, n_h)
        return joint

    def describe(self) -> str:
        if self.is_stratified:
            return f"STR(N={self.N}, n={self.n}, n_h={self.allocation})"
        return f"SRS(N={self.N}, n={self.n})"


def _pair_prob(N: int, n: int) -> float:
    if N < 2:
        return 0.0
    return n * (n - 1) / (N * (N - 1))


@dataclass(frozen=True, eq=False)
class InclusionProbs:
    """Closed-form inclusion probabilities of a Design."""

    design: Design

    def __post_init__(self):
        pi = self.design.first_order()
        pair = self.design.same_stratum_joint()
        pi.setflags(write=False)
        pair.setflags(write=False)
        object.__setattr__(self, "_pi", pi)
        object.__setattr__(self, "_pair", pair)

    @property
    def pi(self) -> np.ndarray:
        return self._pi

    def first_order(self, i: int) -> float:
        return float(self._pi[i])

    def second_order(self, i: int, j: int) -> float:
        if i == j:
            return float(self._pi[i])
        if self.design.is_stratified and self.design.stratum[i] != self.design.stratum[j]:
            return float(self._pi[i] * self._pi[j])
        return float(self._pair[i])

    def joint(self, units: Optional[np.ndarray] = None) -> np.ndarray:
        """Matrix of pi_ij over `units` (all units when omitted)."""
        units = np.arange(self.design.N) if units is None else np.asarray(units, dtype=int)
        pi = self._pi[units]
        if self.design.is_stratified:
            labels = self.design.stratum[units]
            same = labels[:, None] == labels[None, :]
            matrix = np.where(same, self._pair[units][:, None], np.outer(pi, pi))
        else:
            matrix = np.full((units.size, units.size), self._pair[0] if units.size else 0.0)
        np.fill_diagonal(matrix, pi)
        return matrix


@dataclass(frozen=True, eq=False)
class SampleDraw:
    """Sampled unit indices (sorted) with their design weights d_i = 1/pi_i."""

    units: np.ndarray
    weights: np.ndarray
    design: Design

    def __post_init__(self):
        units = np.asarray(self.units, dtype=int)
        weights = np.asarray(self.weights, dtype=float)
        units.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return int(self.units.size)

    @property
    def pi(self) -> np.ndarray:
        return 1.0 / self.weights

    @property
    def strata(self) -> Optional[np.ndarray]:
        if not self.design.is_stratified:
            return None
        return self.design.stratum[self.units]

    def contains(self, i: int) -> bool:
        return bool(np.any(self.units == i))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _make_draw(design: Design, units: np.ndarray, pi: np.ndarray) -> SampleDraw:
    units = np.sort(units)
    return SampleDraw(units=units, weights=1.0 / pi[units], design=design)


def draw(design: Design, seed) -> SampleDraw:
    """
    Draw one sample.

    Args:
        design: SRS or STR design
        seed: integer seed, SeedSequence or Generator

    Returns:
        SampleDraw with sorted units
    """
    if design.n > design.N:
        raise Infeasible(f"sample size {design.n} exceeds population size {design.N}")
    rng = _as_rng(seed)
    pi = design.first_order()
    if not design.is_stratified:
        units = rng.choice(design.N, size=design.n, replace=False)
    else:
        parts = [rng.choice(design.stratum_units(h), size=n_h, replace=False)
                 for h, n_h in design.allocation.items()]
        units = np.concatenate(parts)
    return _make_draw(design, units, pi)


def inclusion_probs(design: Design) -> InclusionProbs:
    return InclusionProbs(design)


def enumerate_samples(design: Design) -> Iterator[SampleDraw]:
    """Every sample of the design, all equally likely, in lexicographic order."""
    if design.N > ENUMERATION_MAX_N:
        raise Infeasible(f"enumeration is limited to N <= {ENUMERATION_MAX_N}, got N={design.N}")
    pi = design.first_order()
    if not design.is_stratified:
        for combo in itertools.combinations(range(design.N), design.n):
            yield _make_draw(design, np.array(combo, dtype=int), pi)
        return
    per_stratum = [list(itertools.combinations(design.stratum_units(h).tolist(), n_h))
                   for h, n_h in design.allocation.items()]
    for parts in itertools.product(*per_stratum):
        yield _make_draw(design, np.array([u for part in parts for u in part], dtype=int), pi)


def sample_count(design: Design) -> int:
    if not design.is_stratified:
        return math.comb(design.N, design.n)
    return math.prod(math.comb(design.stratum_size(h), n_h) for h, n_h in design.allocation.items())


def _largest_remainder(targets: np.ndarray, total: int) -> np.ndarray:
    floors = np.floor(targets + 1e-12).astype(int)
    short = total - int(floors.sum())
    if short > 0:
        remainders = targets - floors
        # stable sort on -remainder: ties go to the lowest stratum index
        order = np.argsort(-remainders, kind="stable")
        floors[order[:short]] += 1
    return floors


def _allocate(sizes: np.ndarray, shares: np.ndarray, n: int) -> np.ndarray:
    """Allocate n proportionally to `shares`, clamped to [2, N_h] per stratum."""
    H = sizes.size
    lower = np.full(H, 2.0)
    upper = sizes.astype(float)
    fixed = np.full(H, np.nan)
    while True:
        free = np.isnan(fixed)
        if not free.any():
            break
        remaining = n - np.nansum(fixed)
        weight = shares[free]
        if weight.sum() <= 0:
            weight = sizes[free].astype(float)
        targets = np.full(H, np.nan)
        targets[free] = remaining * weight / weight.sum()
        low = free & (targets < lower)
        high = free & (targets > upper)
        if not low.any() and not high.any():
            break
        fixed[low] = lower[low]
        fixed[high] = upper[high]
    targets = np.where(np.isnan(fixed), targets, fixed)
    return _largest_remainder(targets, n)


def _stratified_allocation(pop: CurvePopulation, n: int, shares_by: str) -> Design:
    if pop.stratum is None:
        raise Infeasible("stratified allocation needs stratum labels")
    labels = pop.strata_labels
    H = len(labels)
    if n < 2 * H:
        raise Infeasible(f"n={n} is below the minimum 2 units per stratum for H={H} strata")
    if n > pop.N:
        raise Infeasible(f"n={n} exceeds population size N={pop.N}")
    sizes = np.array([pop.stratum_sizes()[h] for h in labels])
    if np.any(sizes < 2):
        small = [int(h) for h, size in zip(labels, sizes) if size < 2]
        raise Infeasible(f"strata {small} hold fewer than 2 units")
    if shares_by == "neyman":
        if pop.auxiliary is None:
            raise Infeasible("Neyman allocation needs auxiliary values")
        sd = np.array([np.std(pop.auxiliary[pop.stratum == h], ddof=1) for h in labels])
        shares = sizes * sd
    else:
        shares = sizes.astype(float)
    alloc = _allocate(sizes, shares, n)
    allocation = {h: int(a) for h, a in zip(labels, alloc)}
    logger.info(f"{shares_by} allocation for n={n}: {allocation}")
    return Design.stratified(pop.stratum, allocation)


def optimal_allocation(pop: CurvePopulation, n: int) -> Design:
    """Neyman allocation n_h proportional to N_h S_h of the auxiliary scalar."""
    return _stratified_allocation(pop, n, "neyman")


def proportional_allocation(pop: CurvePopulation, n: int) -> Design:
    return _stratified_allocation(pop, n, "proportional")


def explicit_allocation(pop: CurvePopulation, allocation: Dict[int, int]) -> Design:
    if pop.stratum is None:
        raise Infeasible("stratified allocation needs stratum labels")
    return Design.stratified(pop.stratum, allocation)


def parse_allocation(text: str) -> Dict[int, int]:
    """Parse `h:n_h,h:n_h,...` (e.g. `1:10,2:30`)."""
    allocation = {}
    try:
        for item in text.split(","):
            h, n_h = item.split(":")
            allocation[int(h)] = int(n_h)
    except ValueError as e:
        raise Infeasible(f"cannot parse allocation '{text}', expected h:n_h,h:n_h,...") from e
    return allocation


def build_design(pop: CurvePopulation, kind: str, n: int, allocation: str = "neyman",
                 explicit: Optional[Dict[int, int]] = None) -> Design:
    if kind == SRS:
        return Design.srs(pop.N, n)
    if kind != STR:
        raise UnsupportedDesign(f"unknown design kind: {kind}")
    if allocation == "neyman":
        return optimal_allocation(pop, n)
    if allocation == "proportional":
        return proportional_allocation(pop, n)
    if allocation == "explicit":
        if not explicit:
            raise Infeasible("explicit allocation requested without allocation values")
        return explicit_allocation(pop, explicit)
    raise UnsupportedDesign(f"unknown allocation rule: {allocation}")
