"""
Depth-based functional truncation of conditional biases.

Conditional-bias curves are ranked by modified band depth; the band spanned by the deepest half,
smoothed by a moving average and dilated around the mean bias curve by a factor alpha, clamps every
bias curve. A single alpha is chosen for the whole curve.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .exceptions import SampleTooSmall, SpecError
from .ht_estimator import CondBiasMatrix
from .robust_pointwise import MAX_REFINEMENTS, MINIMAX, NONE, RobustTotalEstimate, Tuning

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 5
DEFAULT_ALPHA_SCAN = 101


@dataclass(frozen=True, eq=False)
class DepthRanking:
    mbd: np.ndarray
    central_set: np.ndarray


@dataclass(frozen=True, eq=False)
class Envelope:
    lower: np.ndarray
    upper: np.ndarray
    mean_bias: np.ndarray
    smoothing_window: int


def _rows(biases) -> np.ndarray:
    if isinstance(biases, CondBiasMatrix):
        return biases.rows
    return np.atleast_2d(np.asarray(biases, dtype=float))


def mbd(biases) -> DepthRanking:
    """
    Modified band depth of every row, over all unordered pairs of rows with inclusive bands.

    At each grid point a row lies outside the band of a pair only when both members are strictly
    below it or both strictly above, so the pair count is C(n,2) - C(below,2) - C(above,2).
    """
    rows = _rows(biases)
    n, D = rows.shape
    if n < 3:
        raise SampleTooSmall(f"band depth needs at least three curves, got {n}")
    ordered = np.sort(rows, axis=0)
    below = np.empty((n, D), dtype=np.int64)
    above = np.empty((n, D), dtype=np.int64)
    for d in range(D):
        below[:, d] = np.searchsorted(ordered[:, d], rows[:, d], side="left")
        above[:, d] = n - np.searchsorted(ordered[:, d], rows[:, d], side="right")
    pairs = n * (n - 1) // 2
    inside = pairs - below * (below - 1) // 2 - above * (above - 1) // 2
    depth = inside.sum(axis=1) / (pairs * D)

    size = math.ceil(n / 2)
    order = np.lexsort((np.arange(n), -depth))
    central = np.sort(order[:size])
    return DepthRanking(mbd=depth, central_set=central)


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; windows shrink at the edges."""
    if window < 1 or window % 2 == 0:
        raise SpecError(f"smoothing window must be a positive odd integer, got {window}")
    values = np.asarray(values, dtype=float)
    # np.convolve(mode="same") returns the longer input's length
    window = min(window, values.size if values.size % 2 else values.size - 1)
    if window <= 1:
        return values.copy()
    kernel = np.ones(window)
    sums = np.convolve(values, kernel, mode="same")
    counts = np.convolve(np.ones(len(values)), kernel, mode="same")
    return sums / counts


def central_envelope(biases, ranking: DepthRanking, window: int = DEFAULT_WINDOW) -> Envelope:
    rows = _rows(biases)
    central = rows[ranking.central_set]
    lower = moving_average(central.min(axis=0), window)
    upper = moving_average(central.max(axis=0), window)
    lower, upper = np.minimum(lower, upper), np.maximum(lower, upper)
    return Envelope(lower=lower, upper=upper, mean_bias=rows.mean(axis=0), smoothing_window=window)


def psi_alpha(row: np.ndarray, env: Envelope, alpha: float) -> np.ndarray:
    """Clamp `row` (or every row of a matrix) to the band mu + alpha (L - mu) .. mu + alpha (U - mu)."""
    if alpha < 0:
        raise SpecError(f"dilatation must be nonnegative, got {alpha}")
    mu = env.mean_bias
    top = mu + alpha * (env.upper - mu)
    bottom = mu + alpha * (env.lower - mu)
    return np.maximum(np.minimum(row, top), bottom)


def alpha_max(biases, env: Envelope) -> float:
    """Smallest alpha for which the clamp leaves every row unchanged (1 when nothing constrains it)."""
    rows = _rows(biases)
    mu = env.mean_bias
    up = env.upper - mu
    down = mu - env.lower
    needs = []
    high = (rows > mu) & (up > 0)
    if high.any():
        needs.append(np.max(((rows - mu) / np.where(up > 0, up, 1.0))[high]))
    low = (rows < mu) & (down > 0)
    if low.any():
        needs.append(np.max(((mu - rows) / np.where(down > 0, down, 1.0))[low]))
    return float(max(needs)) if needs else 1.0


def _objective(rows: np.ndarray, env: Envelope, alpha: float, tuning: Tuning) -> float:
    shift = np.sum(psi_alpha(rows, env, alpha) - rows, axis=0)
    residual = np.abs(rows + shift)
    if tuning.kind == MINIMAX:
        return float(np.max(residual.mean(axis=1)))
    return float(np.mean(np.sum(residual ** tuning.q, axis=0)))


def optimize_alpha(rows: np.ndarray, env: Envelope, tuning: Tuning, upper: float,
                   scan_points: int = DEFAULT_ALPHA_SCAN) -> float:
    """Scan [0, upper], refine the best local minima with bounded Brent; ties go to the larger alpha."""
    if upper <= 0:
        return 0.0
    grid = np.linspace(0.0, upper, scan_points)
    values = np.array([_objective(rows, env, a, tuning) for a in grid])
    left = np.concatenate([[np.inf], values[:-1]])
    right = np.concatenate([values[1:], [np.inf]])
    minima = np.flatnonzero((values <= left) & (values <= right))
    minima = minima[np.argsort(values[minima], kind="stable")][:MAX_REFINEMENTS]

    candidates = list(zip(grid.tolist(), values.tolist()))
    for k in minima:
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, scan_points - 1)]
        if hi <= lo:
            continue
        result = minimize_scalar(lambda a: _objective(rows, env, a, tuning), bounds=(lo, hi),
                                 method="bounded", options={"xatol": 1e-6 * max(upper, 1e-12)})
        candidates.append((float(result.x), float(result.fun)))
    best = min(f for _, f in candidates)
    return max(a for a, f in candidates if f <= best + 1e-12 * max(best, 1e-300))


def r4_estimate(ht: np.ndarray, biases, tuning: Tuning, window: int = DEFAULT_WINDOW,
                scan_points: int = DEFAULT_ALPHA_SCAN) -> RobustTotalEstimate:
    """
    HT total plus the depth-band correction sum_i (psi_alpha(B_i) - B_i) at the tuned alpha.

    Args:
        ht: HT total curve
        biases: conditional-bias matrix (n >= 3 rows)
        tuning: minimax or q-th power criterion for alpha ("none" keeps alpha at its maximum)
        window: moving-average width applied to the envelope
        scan_points: alpha grid size before refinement
    """
    rows = _rows(biases)
    ranking = mbd(rows)
    env = central_envelope(rows, ranking, window)
    top = alpha_max(rows, env)

    if tuning.kind == NONE:
        alpha = top
    else:
        scale = float(np.max(np.abs(rows)))
        if scale > 0:
            scaled_env = Envelope(env.lower / scale, env.upper / scale, env.mean_bias / scale, window)
            alpha = optimize_alpha(rows / scale, scaled_env, tuning, top, scan_points)
        else:
            alpha = top

    corrections = psi_alpha(rows, env, alpha) - rows
    shift = corrections.sum(axis=0)
    logger.debug(f"R4 {tuning.label}: alpha={alpha:.6g} of alpha_max={top:.6g}")
    return RobustTotalEstimate(
        curve=np.asarray(ht, dtype=float) + shift,
        method="R4",
        tuning=np.array([alpha]),
        delta=shift,
        unit_corrections=corrections,
        extras={"tuning": tuning.label, "alpha": float(alpha), "alpha_max": top, "window": int(window),
                "central_size": int(ranking.central_set.size)},
    )
