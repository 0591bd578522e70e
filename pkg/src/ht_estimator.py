"""
Horvitz-Thompson total estimation and conditional biases.

Curve collections are (units, D) arrays; results are length-D arrays on the population grid.
Population-level quantities (true conditional biases, remainder terms, covariance) need the full
population and are meant for oracles and diagnostics.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .curves import CurvePopulation
from .exceptions import CensusUnit, DegenerateStratum, SpecError, UnsupportedDesign
from .sampling import Design, InclusionProbs, SampleDraw, inclusion_probs

logger = logging.getLogger(__name__)

GENERAL = "general"
SRS_CLOSED = "srs_closed"
STR_CLOSED = "str_closed"


@dataclass(frozen=True, eq=False)
class CondBiasMatrix:
    """Estimated conditional-bias curves, one row per sampled unit (sample order)."""

    rows: np.ndarray
    method: str

    @property
    def n(self) -> int:
        return int(self.rows.shape[0])

    def scaled(self, kappa: float) -> "CondBiasMatrix":
        return CondBiasMatrix(kappa * self.rows, self.method)


def ht_total(sample: SampleDraw, y: np.ndarray) -> np.ndarray:
    """t_hat(t_d) = sum over the sample of d_i * Y_i(t_d)."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return sample.weights @ y


def _srs_closed(y: np.ndarray, N: int, n: int) -> np.ndarray:
    if n < 2:
        raise DegenerateStratum(f"conditional bias needs at least two sampled units, got n={n}")
    factor = n / (n - 1) * (N / n - 1.0)
    return factor * (y - y.mean(axis=0))


def _general(y: np.ndarray, pi: np.ndarray, joint: np.ndarray) -> np.ndarray:
    """
    Double-sum formula for any design with all pi_ij > 0.

    Builds the dense (n, n) coefficient matrix, so it costs O(n^2) memory and O(n^2 D) time;
    SRS and STR samples go through the O(n D) closed forms unless "general" is asked for.
    """
    off = ~np.eye(pi.size, dtype=bool)
    if np.any(joint[off] <= 0):
        raise DegenerateStratum("a pair of sampled units has zero joint inclusion probability")
    coef = (joint - np.outer(pi, pi)) / (pi[None, :] * joint)
    return coef @ y


def conditional_bias_estimated(sample: SampleDraw, probs: InclusionProbs, y: np.ndarray,
                               method: str = "auto") -> CondBiasMatrix:
    """
    Conditionally unbiased estimates of B_1i for every sampled unit.

    Args:
        sample: the drawn sample
        probs: inclusion probabilities of the sample's design
        y: (n, D) curves of the sampled units, sample order
        method: "auto" (closed form of the design), "general" (dense double sum, O(n^2 D)),
            "srs_closed" or "str_closed"

    Returns:
        CondBiasMatrix with one row per sampled unit
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    design = sample.design
    if method == "auto":
        method = STR_CLOSED if design.is_stratified else SRS_CLOSED

    if method == GENERAL:
        rows = _general(y, probs.pi[sample.units], probs.joint(sample.units))
    elif method == SRS_CLOSED:
        if design.is_stratified:
            raise UnsupportedDesign("the SRS closed form needs an SRS design")
        rows = _srs_closed(y, design.N, sample.n)
    elif method == STR_CLOSED:
        if not design.is_stratified:
            raise UnsupportedDesign("the stratified closed form needs a stratified design")
        rows = np.empty_like(y)
        labels = sample.strata
        for h, n_h in design.allocation.items():
            members = labels == h
            rows[members] = _srs_closed(y[members], design.stratum_size(h), n_h)
    else:
        raise SpecError(f"unknown conditional bias method: {method}")
    return CondBiasMatrix(rows=rows, method=method)


def conditional_bias_true(pop: CurvePopulation, design: Design, i: int) -> np.ndarray:
    """B_1i = sum over U of (pi_ij / (pi_i pi_j) - 1) Y_j."""
    probs = inclusion_probs(design)
    pi = probs.pi
    joint_row = probs.joint()[i]
    return (joint_row / (pi[i] * pi) - 1.0) @ pop.values


def conditional_bias_nonsampled(pop: CurvePopulation, design: Design, i: int) -> np.ndarray:
    """B_0i = -B_1i / (d_i - 1); undefined for units sampled with certainty."""
    pi_i = inclusion_probs(design).first_order(i)
    if pi_i >= 1.0:
        raise CensusUnit(f"unit {i} is sampled with certainty; B_0 is undefined")
    return -conditional_bias_true(pop, design, i) / (1.0 / pi_i - 1.0)


def remainder_terms(pop: CurvePopulation, design: Design) -> np.ndarray:
    """
    A_i = -1/(1 - pi_i) * sum over j != i of (pi_ij - pi_i pi_j) / pi_j * Y_j, for all N units.

    Units sampled with certainty get A_i = 0.
    """
    probs = inclusion_probs(design)
    pi = probs.pi
    cov = probs.joint() - np.outer(pi, pi)
    np.fill_diagonal(cov, 0.0)
    pulled = (cov / pi[None, :]) @ pop.values
    scale = np.zeros_like(pi)
    uncertain = pi < 1.0
    scale[uncertain] = -1.0 / (1.0 - pi[uncertain])
    return scale[:, None] * pulled


class ErrorDecomposition(NamedTuple):
    error: np.ndarray
    sampled_bias: np.ndarray
    nonsampled_bias: np.ndarray
    remainder: np.ndarray


def error_decomposition(pop: CurvePopulation, sample: SampleDraw) -> ErrorDecomposition:
    """Split t_hat - t_Y into sampled B_1 terms, nonsampled B_0 terms and the A_i remainder."""
    design = sample.design
    probs = inclusion_probs(design)
    pi = probs.pi
    total = pop.values.sum(axis=0)
    estimate = ht_total(sample, pop.values[sample.units])

    ratio = probs.joint() / np.outer(pi, pi) - 1.0
    b1 = ratio @ pop.values
    in_sample = np.zeros(pop.N, dtype=bool)
    in_sample[sample.units] = True
    out = ~in_sample
    b0 = -b1[out] / (1.0 / pi[out] - 1.0)[:, None]

    a = remainder_terms(pop, design)
    remainder = sample.weights @ a[sample.units] - a.sum(axis=0)
    return ErrorDecomposition(
        error=estimate - total,
        sampled_bias=b1[in_sample].sum(axis=0),
        nonsampled_bias=b0.sum(axis=0),
        remainder=remainder,
    )


def remainder_identity_check(pop: CurvePopulation, sample: SampleDraw):
    """
    Both sides of the SRS remainder identity
    sum_s d_i A_i - sum_U A_i = (t_Y - t_hat) / (N - 1).
    """
    design = sample.design
    if design.is_stratified:
        raise UnsupportedDesign("the remainder identity holds for SRS designs only")
    a = remainder_terms(pop, design)
    left = sample.weights @ a[sample.units] - a.sum(axis=0)
    if pop.N < 2:
        return left, np.zeros(pop.D)
    right = (pop.values.sum(axis=0) - ht_total(sample, pop.values[sample.units])) / (pop.N - 1)
    return left, right


def remainder_high_entropy_approx(pop: CurvePopulation, sample: SampleDraw) -> np.ndarray:
    """
    High-entropy approximation of the remainder,
    (sum_U pi_i(1-pi_i) Y_i - sum_s (1-pi_i) Y_i) / sum_U pi_i(1-pi_i).
    """
    pi = inclusion_probs(sample.design).pi
    spread = pi * (1.0 - pi)
    d_pi = spread.sum()
    if d_pi <= 0:
        return np.zeros(pop.D)
    population_part = spread @ pop.values
    sample_part = (1.0 - pi[sample.units]) @ pop.values[sample.units]
    return (population_part - sample_part) / d_pi


def ht_covariance(pop: CurvePopulation, design: Design) -> np.ndarray:
    """D x D design covariance of t_hat: sum_ij (pi_ij - pi_i pi_j) Y_i(r)/pi_i Y_j(t)/pi_j."""
    probs = inclusion_probs(design)
    pi = probs.pi
    expanded = pop.values / pi[:, None]
    delta = probs.joint() - np.outer(pi, pi)
    return expanded.T @ delta @ expanded


def ht_variance_true(pop: CurvePopulation, design: Design) -> np.ndarray:
    return np.diag(ht_covariance(pop, design)).copy()
