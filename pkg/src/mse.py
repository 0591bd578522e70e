"""
Pointwise mean square error estimation for the robust total estimators.

mse(t) = v(t_R)(t) + max(0, (t_R(t) - t_hat(t))^2 - v(t_R - t_hat)(t)), where the two variances
come either from the HT variance estimator applied to linearized variables or from bootstrap
replicates (Gross/Booth pseudo-population, or generalized bootstrap weights).
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .curves import TimeGrid
from .estimators import EstimatorSpec, run_estimator
from .exceptions import (CovarianceError, DegenerateStratum, DesignError, SpecError, TooFewReplicates,
                         UnsupportedDesign)
from .ht_estimator import ht_total
from .replication import derive_seeds, map_replicates
from .robust_pointwise import RobustTotalEstimate
from .robust_spca import linearized_eigenfunctions, median_linearization
from .sampling import SRS, STR, Design, InclusionProbs, SampleDraw, draw, inclusion_probs

logger = logging.getLogger(__name__)

LINEARIZATION = "linearization"
GROSS = "gross"
GENBOOT = "genboot"
MSE_METHODS = (LINEARIZATION, GROSS, GENBOOT)


@dataclass
class MseReport:
    """Pointwise MSE estimate with the variance pieces it was built from."""

    method: str
    v_estimate: np.ndarray
    v_difference: np.ndarray
    bias_term: np.ndarray
    mse: np.ndarray
    B: int = 0
    extras: Dict[str, Any] = field(default_factory=dict)

    def metadata(self) -> Dict[str, Any]:
        meta = {"mse_method": self.method, "replicates": self.B}
        meta.update({k: v for k, v in self.extras.items() if isinstance(v, (str, int, float, bool))})
        return meta


def combine(method: str, v_estimate: np.ndarray, v_difference: np.ndarray, bias: np.ndarray,
            B: int = 0, **extras) -> MseReport:
    bias_sq = np.asarray(bias, dtype=float) ** 2
    mse = v_estimate + np.maximum(0.0, bias_sq - v_difference)
    return MseReport(method, v_estimate, v_difference, bias_sq, mse, B, dict(extras))


def _strata_groups(sample: SampleDraw) -> List[Tuple[np.ndarray, int, int]]:
    """(positions in sample, N_h, n_h) per stratum, a single group under SRS."""
    design = sample.design
    if not design.is_stratified:
        return [(np.arange(sample.n), design.N, sample.n)]
    labels = sample.strata
    return [(np.flatnonzero(labels == h), design.stratum_size(h), n_h) for h, n_h in design.allocation.items()]


def _ht_variance_literal(sample: SampleDraw, probs: InclusionProbs, values: np.ndarray) -> np.ndarray:
    pi = probs.pi[sample.units]
    joint = probs.joint(sample.units)
    if np.any(joint <= 0):
        raise DesignError("a sampled pair has zero joint inclusion probability")
    weight = (joint - np.outer(pi, pi)) / joint
    expanded = values / pi[:, None]
    return np.einsum("id,ij,jd->d", expanded, weight, expanded)


def ht_variance_estimate(sample: SampleDraw, probs: InclusionProbs, values: np.ndarray,
                         method: str = "auto") -> np.ndarray:
    """
    HT variance estimator sum_ij (pi_ij - pi_i pi_j)/pi_ij * v_i/pi_i * v_j/pi_j at every grid point.

    "auto" uses sum_h N_h^2 (1 - f_h) s_h^2 / n_h for SRS/STR, which needs
    n_h >= 2 everywhere; "literal" always evaluates the double sum.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if method == "literal":
        return _ht_variance_literal(sample, probs, values)
    groups = _strata_groups(sample)
    if any(n_h < 2 for _, _, n_h in groups):
        raise DegenerateStratum("the variance estimator needs at least 2 sampled units")
    total = np.zeros(values.shape[1])
    for positions, N_h, n_h in groups:
        s2 = np.var(values[positions], axis=0, ddof=1)
        total += N_h ** 2 * (1.0 - n_h / N_h) * s2 / n_h
    return total


def linearized_values(spec: EstimatorSpec, estimate: RobustTotalEstimate, sample: SampleDraw,
                      y: np.ndarray, N: float) -> np.ndarray:
    """
    Per-unit linearized variables of the estimator.

    HT: Y_i. R1/R3/R4: Y_i + pi_i (psi(B_i) - B_i) in the time domain. R2: median linearization plus
    eigenfunction perturbation, score and score-correction terms along each kept component.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    pi = sample.pi[:, None]
    if spec.kind == "ht":
        return y.copy()
    if spec.kind != "r2":
        return y + pi * estimate.unit_corrections

    pca = estimate.extras["pca"]
    scores = estimate.extras["scores"]
    totals = estimate.extras["score_totals"]
    corrections = estimate.extras["score_corrections"]
    residuals = y - pca.median.curve
    norms = pca.grid.norm(residuals)
    x = np.where(norms[:, None] > 0, residuals / np.where(norms > 0, norms, 1.0)[:, None], 0.0)

    u = median_linearization(pca, y, sample.weights, N, spec.median_linearization)
    perturbed = linearized_eigenfunctions(pca, x)
    along = (scores + pi * corrections) @ pca.eigenfunctions
    moved = np.einsum("k,ikd->id", totals / N, perturbed)
    return u + moved + along


def mse_estimate_linearized(spec: EstimatorSpec, estimate: RobustTotalEstimate, sample: SampleDraw,
                            probs: InclusionProbs, y: np.ndarray, N: float,
                            true_total: Optional[np.ndarray] = None) -> MseReport:
    """
    Linearization MSE estimate.

    The bias term is t_R - t_hat; passing `true_total` replaces t_hat by the known total
    (diagnostic use only).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    linear = linearized_values(spec, estimate, sample, y, N)
    v_r = ht_variance_estimate(sample, probs, linear)
    v_diff = ht_variance_estimate(sample, probs, linear - y)
    reference = ht_total(sample, y) if true_total is None else np.asarray(true_total, dtype=float)
    report = combine(LINEARIZATION, v_r, v_diff, estimate.curve - reference,
                     diagnostic=true_total is not None)
    logger.debug(f"Linearized MSE for {spec.name}: mean {report.mse.mean():.6g}")
    return report


def _replicate_report(method: str, replicates: List[Tuple[np.ndarray, np.ndarray]],
                      estimate: RobustTotalEstimate, ht: np.ndarray, B: int, **extras) -> MseReport:
    robust = np.vstack([r for r, _ in replicates])
    plain = np.vstack([h for _, h in replicates])
    v_r = np.var(robust, axis=0, ddof=1)
    v_diff = np.var(robust - plain, axis=0, ddof=1)
    return combine(method, v_r, v_diff, estimate.curve - ht, B, **extras)


def pseudo_population(sample: SampleDraw, y: np.ndarray, seed) -> Tuple[np.ndarray, Design]:
    """
    Pseudo-population for the Gross/Booth bootstrap.

    Each sampled unit of stratum h is copied floor(N_h/n_h) times and the stratum is completed by
    an SRS of N_h - n_h floor(N_h/n_h) of its sampled units.

    Returns:
        (source, design): sample positions behind every pseudo-unit, and the original design
        rebuilt over the pseudo-population
    """
    rng = np.random.default_rng(seed)
    design = sample.design
    sources, labels = [], []
    allocation = {}
    for h_index, (positions, N_h, n_h) in enumerate(_strata_groups(sample)):
        copies = N_h // n_h
        rest = N_h - n_h * copies
        block = np.concatenate([np.repeat(positions, copies), rng.choice(positions, size=rest, replace=False)])
        sources.append(block)
        if design.is_stratified:
            h = design.strata[h_index]
            labels.append(np.full(block.size, h))
            allocation[h] = n_h
    source = np.concatenate(sources)
    if design.is_stratified:
        return source, Design.stratified(np.concatenate(labels), allocation)
    return source, Design.srs(source.size, design.n)


def gross_bootstrap(spec: EstimatorSpec, estimate: RobustTotalEstimate, sample: SampleDraw,
                    y: np.ndarray, grid: TimeGrid, B: int, seed: int, workers: int = 1) -> MseReport:
    """
    Gross/Booth bootstrap MSE: B samples of the original design drawn from one pseudo-population,
    with the estimator (tuning included) rerun on each.
    """
    if B < 2:
        raise TooFewReplicates(f"bootstrap needs at least 2 replicates, got B={B}")
    if sample.design.kind not in (SRS, STR):
        raise UnsupportedDesign(f"bootstrap supports SRS and STR designs, got {sample.design.kind}")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    seeds = derive_seeds(seed, B + 1)
    source, design = pseudo_population(sample, y, seeds[0])
    values = y[source]
    probs = inclusion_probs(design)
    N = sample.design.N

    def replicate(child):
        star = draw(design, child)
        y_star = values[star.units]
        result = run_estimator(spec, star, probs, y_star, grid, N)
        return result.curve, ht_total(star, y_star)

    replicates = map_replicates(replicate, seeds[1:], workers)
    report = _replicate_report(GROSS, replicates, estimate, ht_total(sample, y), B, seed=seed)
    logger.info(f"Gross bootstrap for {spec.name}: B={B}, mean MSE {report.mse.mean():.6g}")
    return report


def multiplier_covariance(sample: SampleDraw, probs: InclusionProbs) -> np.ndarray:
    """Covariance of the weight multipliers: 1 - pi_i pi_j / pi_ij (1 - pi_i on the diagonal)."""
    pi = probs.pi[sample.units]
    joint = probs.joint(sample.units)
    if np.any(joint <= 0):
        raise DesignError("a sampled pair has zero joint inclusion probability")
    return 1.0 - np.outer(pi, pi) / joint


def covariance_root(cov: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Symmetric square root of a PSD matrix; small negative eigenvalues are set to zero."""
    values, vectors = np.linalg.eigh(0.5 * (cov + cov.T))
    floor = -tol * max(1.0, float(np.max(np.abs(values))))
    if values.min() < floor:
        raise CovarianceError(f"multiplier covariance is not PSD (min eigenvalue {values.min():.3g})")
    return (vectors * np.sqrt(np.maximum(values, 0.0))) @ vectors.T


def draw_multipliers(sample: SampleDraw, probs: InclusionProbs, rng: np.random.Generator,
                     method: str = "closed") -> np.ndarray:
    """
    Multipliers m_i = N w*_i with mean 1 and covariance 1 - pi_i pi_j / pi_ij.

    "closed" uses the exchangeable structure of SRS/STR within each stratum,
    m = 1 + sqrt((1 - f_h) n_h / (n_h - 1)) (z - mean_h z); "spectral" uses a symmetric root of the
    full covariance.
    """
    z = rng.standard_normal(sample.n)
    if method == "spectral":
        return 1.0 + covariance_root(multiplier_covariance(sample, probs)) @ z
    m = np.ones(sample.n)
    for positions, N_h, n_h in _strata_groups(sample):
        f_h = n_h / N_h
        block = z[positions]
        m[positions] += np.sqrt((1.0 - f_h) * n_h / (n_h - 1)) * (block - block.mean())
    return m


def replicate_weights(sample: SampleDraw, probs: InclusionProbs, seed, method: str = "closed") -> np.ndarray:
    """Random weights w* with E(w*) = 1/N and Var(w*) = (1 - pi_i)/N^2."""
    return draw_multipliers(sample, probs, np.random.default_rng(seed), method) / sample.design.N


def generalized_bootstrap(spec: EstimatorSpec, estimate: RobustTotalEstimate, sample: SampleDraw,
                          probs: InclusionProbs, y: np.ndarray, grid: TimeGrid, B: int, seed: int,
                          workers: int = 1, method: str = "closed") -> MseReport:
    """Generalized bootstrap MSE: the sample is kept and every unit's weight d_i becomes m_i d_i."""
    if B < 2:
        raise TooFewReplicates(f"bootstrap needs at least 2 replicates, got B={B}")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    N = sample.design.N

    def replicate(child):
        m = draw_multipliers(sample, probs, np.random.default_rng(child), method)
        result = run_estimator(spec, sample, probs, y, grid, N, multipliers=m)
        return result.curve, ht_total(sample, m[:, None] * y)

    replicates = map_replicates(replicate, derive_seeds(seed, B), workers)
    report = _replicate_report(GENBOOT, replicates, estimate, ht_total(sample, y), B, seed=seed)
    logger.info(f"Generalized bootstrap for {spec.name}: B={B}, mean MSE {report.mse.mean():.6g}")
    return report


def estimate_mse(method: str, spec: EstimatorSpec, estimate: RobustTotalEstimate, sample: SampleDraw,
                 probs: InclusionProbs, y: np.ndarray, grid: TimeGrid, B: int = 1000, seed: int = 0,
                 workers: int = 1, true_total: Optional[np.ndarray] = None) -> MseReport:
    if method == LINEARIZATION:
        return mse_estimate_linearized(spec, estimate, sample, probs, y, sample.design.N, true_total)
    if method == GROSS:
        return gross_bootstrap(spec, estimate, sample, y, grid, B, seed, workers)
    if method == GENBOOT:
        return generalized_bootstrap(spec, estimate, sample, probs, y, grid, B, seed, workers)
    raise SpecError(f"unknown MSE method: {method}")
