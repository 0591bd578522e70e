"""
Robust total estimation through spherical principal components.

The sample is summarized by its weighted geometric median and the eigenfunctions of the
sphericized covariance of residual curves; the total is rebuilt from the median and robustified
principal-component totals. Norms and inner products use the grid's quadrature weights.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .curves import TimeGrid
from .exceptions import ConvergenceFailure, DimensionError, EmptySample, SpecError
from .ht_estimator import conditional_bias_estimated
from .robust_pointwise import RobustTotalEstimate, Tuning, tune_columns
from .sampling import InclusionProbs, SampleDraw

logger = logging.getLogger(__name__)

HESSIAN = "hessian"
SPHERICAL = "spherical"
COLLISION_TOL = 1e-10


@dataclass
class GeometricMedian:
    curve: np.ndarray
    iterations: int
    residual: float
    converged: bool = True
    objective_history: List[float] = field(default_factory=list)


@dataclass
class SphericalPca:
    """Top-K eigenpairs of the sphericized covariance, with the full spectrum kept for linearization."""

    median: GeometricMedian
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    grid: TimeGrid
    all_eigenvalues: np.ndarray
    all_eigenfunctions: np.ndarray
    skipped: int = 0

    @property
    def K(self) -> int:
        return int(self.eigenvalues.size)


def _objective(y: np.ndarray, weights: np.ndarray, m: np.ndarray, grid: TimeGrid) -> float:
    return float(weights @ grid.norm(y - m))


def geometric_median(y: np.ndarray, weights: np.ndarray, grid: TimeGrid, tol: float = 1e-8,
                     max_iter: int = 500, lenient: bool = False) -> GeometricMedian:
    """
    Weighted Weiszfeld iteration for the curve m solving sum_i d_i (Y_i - m)/||Y_i - m|| = 0.

    Starts from the weighted mean and stops once ||sum_i d_i u_i|| <= tol * sum_i d_i, with u_i
    the unit residuals. An iterate landing on a data curve takes the Vardi-Zhang step; if the
    remaining pull is no stronger than that curve's weight the curve itself is the median.

    Args:
        y: (n, D) curves
        weights: positive weights d_i
        grid: grid supplying the quadrature inner product
        tol: relative tolerance on the estimating equation
        max_iter: iteration cap
        lenient: on hitting the cap, warn and return the last iterate instead of raising

    Returns:
        GeometricMedian with the per-iteration objective history
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    weights = np.asarray(weights, dtype=float)
    if y.shape[0] == 0:
        raise EmptySample("geometric median of an empty sample")
    if np.any(weights <= 0):
        raise SpecError("geometric median weights must be positive")
    total = weights.sum()

    m = weights @ y / total
    history = [_objective(y, weights, m, grid)]
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        r = y - m
        norms = grid.norm(r)
        collided = norms <= COLLISION_TOL * max(1.0, float(grid.norm(m)))
        active = ~collided
        pull = (weights[active] / norms[active]) @ r[active] if active.any() else np.zeros_like(m)
        pull_norm = float(grid.norm(pull))

        if collided.any():
            stuck = float(weights[collided].sum())
            if pull_norm <= stuck:
                m = y[np.flatnonzero(collided)[0]].copy()
                residual = 0.0
                history.append(_objective(y, weights, m, grid))
                logger.debug(f"Weiszfeld stopped on a data curve after {iteration} iterations")
                return GeometricMedian(m, iteration, residual, True, history)
            inv = weights[active] / norms[active]
            target = inv @ y[active] / inv.sum()
            ratio = stuck / pull_norm
            m = (1.0 - ratio) * target + ratio * m
        else:
            residual = pull_norm
            if residual <= tol * total:
                logger.debug(f"Weiszfeld converged in {iteration - 1} iterations, residual {residual:.3g}")
                return GeometricMedian(m, iteration - 1, residual, True, history)
            inv = weights / norms
            m = inv @ y / inv.sum()
        history.append(_objective(y, weights, m, grid))

    message = f"Weiszfeld did not converge in {max_iter} iterations (residual {residual:.3g})"
    if not lenient:
        raise ConvergenceFailure(message, last_iterate=m)
    logger.warning(message + "; using the last iterate")
    return GeometricMedian(m, max_iter, residual, False, history)


def _sphere(y: np.ndarray, median: np.ndarray, grid: TimeGrid):
    r = y - median
    norms = grid.norm(r)
    keep = norms > COLLISION_TOL * max(1.0, float(grid.norm(median)))
    x = np.zeros_like(r)
    x[keep] = r[keep] / norms[keep, None]
    return r, norms, x, keep


def spherical_covariance(y: np.ndarray, weights: np.ndarray, median: np.ndarray, grid: TimeGrid,
                         N: float):
    """
    (1/N) sum_i d_i x_i x_i^T with x_i = (Y_i - m)/||Y_i - m||.

    Returns:
        (kernel, skipped): the D x D kernel and the number of zero-norm residuals left out
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    _, _, x, keep = _sphere(y, median, grid)
    skipped = int(np.count_nonzero(~keep))
    if skipped:
        logger.warning(f"{skipped} sampled curve(s) coincide with the median and were left out")
    kernel = (x[keep].T * weights[keep]) @ x[keep] / N
    return kernel, skipped


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the first non-negligible coordinate of every row positive."""
    for row in vectors:
        nonzero = np.flatnonzero(np.abs(row) > 1e-12 * np.max(np.abs(row)))
        if nonzero.size and row[nonzero[0]] < 0:
            row *= -1.0
    return vectors


def eigendecompose(kernel: np.ndarray, K: int, grid: TimeGrid,
                   median: Optional[GeometricMedian] = None, skipped: int = 0) -> SphericalPca:
    """
    Eigenpairs of the integral operator with kernel `kernel` under the quadrature inner product.

    Solved as the symmetric problem W^1/2 G W^1/2; eigenfunctions are W-orthonormal rows.
    """
    D = grid.D
    if K > D:
        raise DimensionError(f"cannot keep K={K} components on a grid of D={D} points")
    if K < 1:
        raise DimensionError("K must be at least 1")
    root = np.sqrt(grid.quad_weights)
    sym = root[:, None] * kernel * root[None, :]
    values, vectors = np.linalg.eigh(0.5 * (sym + sym.T))
    values = values[::-1]
    functions = (vectors[:, ::-1] / root[:, None]).T.copy()
    if values.min() < -1e-10 * max(1.0, abs(values.max())):
        logger.warning(f"Kernel has a negative eigenvalue {values.min():.3g}; clipped to zero")
    values = np.maximum(values, 0.0)
    functions = _fix_signs(functions)
    if median is None:
        median = GeometricMedian(np.zeros(D), 0, 0.0)
    return SphericalPca(median=median, eigenvalues=values[:K].copy(), eigenfunctions=functions[:K].copy(),
                        grid=grid, all_eigenvalues=values, all_eigenfunctions=functions, skipped=skipped)


def fit_spherical_pca(y: np.ndarray, weights: np.ndarray, grid: TimeGrid, N: float, K: int,
                      tol: float = 1e-8, max_iter: int = 500, lenient: bool = False) -> SphericalPca:
    median = geometric_median(y, weights, grid, tol, max_iter, lenient)
    kernel, skipped = spherical_covariance(y, weights, median.curve, grid, N)
    return eigendecompose(kernel, K, grid, median, skipped)


def project(y: np.ndarray, pca: SphericalPca) -> np.ndarray:
    """Scores <Y_i - m, v_k> as an (n, K) array."""
    residuals = np.atleast_2d(y) - pca.median.curve
    return (residuals * pca.grid.quad_weights) @ pca.eigenfunctions.T


def r2_estimate(sample: SampleDraw, probs: InclusionProbs, y: np.ndarray, grid: TimeGrid, N: float,
                K: int, tuning: Tuning, multipliers: Optional[np.ndarray] = None, tol: float = 1e-8,
                max_iter: int = 500, lenient: bool = False) -> RobustTotalEstimate:
    """
    Median plus robustified principal-component totals: N m + sum_k F_k^R v_k.

    Each component's score totals F_k are corrected with the tuning applied to the conditional
    biases of that component's scores. With tuning "none" this is the plain substitution estimator.
    `multipliers` rescale every unit's weight (replicate weights).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    weights = sample.weights.copy()
    scale = np.ones(sample.n)
    if multipliers is not None:
        scale = np.maximum(np.asarray(multipliers, dtype=float), 0.0)
        weights = weights * scale
    keep = weights > 0
    if not keep.any():
        raise EmptySample("all replicate weights vanished")
    if K > sample.n:
        logger.warning(f"K={K} exceeds the sample size n={sample.n}")

    pca = fit_spherical_pca(y[keep], weights[keep], grid, N, K, tol, max_iter, lenient)
    scores = project(y, pca)
    totals = weights @ scores

    biases = conditional_bias_estimated(sample, probs, scale[:, None] * scores)
    cutoffs, deltas, corrections = tune_columns(biases.rows, tuning)
    robust_totals = totals + deltas
    curve = N * pca.median.curve + robust_totals @ pca.eigenfunctions
    logger.debug(f"R2 {tuning.label}: K={K}, median iterations={pca.median.iterations}")
    return RobustTotalEstimate(
        curve=curve,
        method="R2" if tuning.kind != "none" else "R2_raw",
        tuning=cutoffs,
        delta=deltas,
        unit_corrections=corrections @ pca.eigenfunctions,
        extras={
            "tuning": tuning.label,
            "K": int(K),
            "median_iterations": int(pca.median.iterations),
            "median_converged": bool(pca.median.converged),
            "pca": pca,
            "scores": scores,
            "score_totals": totals,
            "score_corrections": corrections,
        },
    )


def linearized_eigenfunctions(pca: SphericalPca, x: np.ndarray) -> np.ndarray:
    """
    Per-unit first-order eigenfunction perturbations,
    v~_ik = sum over l != k of <x_i, v_k><x_i, v_l> v_l / (lambda_k - lambda_l),
    for unit-norm residuals x (n, D). Returns an (n, K, D) array; near-equal eigenvalues are skipped.
    """
    w = pca.grid.quad_weights
    lam = pca.all_eigenvalues
    basis = pca.all_eigenfunctions
    coords = (x * w) @ basis.T
    scale = max(float(lam.max()), 1e-300)
    out = np.empty((x.shape[0], pca.K, basis.shape[1]))
    for k in range(pca.K):
        gap = lam[k] - lam
        usable = np.abs(gap) > 1e-10 * scale
        usable[k] = False
        inv_gap = np.zeros_like(lam)
        inv_gap[usable] = 1.0 / gap[usable]
        out[:, k, :] = (coords[:, [k]] * coords * inv_gap) @ basis
    return out


def median_linearization(pca: SphericalPca, y: np.ndarray, weights: np.ndarray, N: float,
                         mode: str = SPHERICAL) -> np.ndarray:
    """
    Linearized variables of N m, one curve per unit.

    "spherical" applies N times the pseudo-inverse of the sphericized covariance restricted to the
    K kept eigenpairs. "hessian" solves H u_i = x_i with
    H = (1/N) sum_j d_j/||r_j|| (I - x_j x_j^T W), the derivative of the median estimating equation.
    """
    grid = pca.grid
    y = np.atleast_2d(np.asarray(y, dtype=float))
    _, norms, x, keep = _sphere(y, pca.median.curve, grid)
    if mode == SPHERICAL:
        positive = pca.eigenvalues > 1e-12 * max(float(pca.eigenvalues.max()), 1e-300)
        v = pca.eigenfunctions[positive]
        coords = (x * grid.quad_weights) @ v.T
        return N * (coords / pca.eigenvalues[positive]) @ v
    if mode != HESSIAN:
        raise SpecError(f"unknown median linearization: {mode}")
    D = grid.D
    inv = np.where(keep, weights / np.where(keep, norms, 1.0), 0.0)
    hessian = (inv.sum() * np.eye(D) - (x.T * inv) @ (x * grid.quad_weights)) / N
    try:
        return np.linalg.solve(hessian, x.T).T
    except np.linalg.LinAlgError:
        logger.warning("Median Hessian is singular; using a least-squares solve")
        return np.linalg.lstsq(hessian, x.T, rcond=None)[0].T
