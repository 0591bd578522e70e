"""
Huber truncation of conditional biases and the pointwise robust estimator.

The same tuning machinery (minimax or q-th power choice of the cut-off) is applied to each
column of a conditional-bias matrix: grid points here, principal-component scores and wavelet
coefficients in the other robust estimators.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .exceptions import EmptySample, SpecError, UnsupportedExponent
from .ht_estimator import CondBiasMatrix

logger = logging.getLogger(__name__)

MINIMAX = "minimax"
QPOW = "qpow"
NONE = "none"
TUNING_KINDS = (MINIMAX, QPOW, NONE)

DEFAULT_SCAN_POINTS = 1001
MAX_REFINEMENTS = 16


@dataclass(frozen=True)
class HuberParams:
    """A tuned Huber cut-off c >= 0 for one bias vector."""

    c: float

    def __post_init__(self):
        if not self.c >= 0:
            raise SpecError(f"Huber threshold must be nonnegative, got {self.c}")

    def psi(self, z: np.ndarray) -> np.ndarray:
        return np.clip(z, -self.c, self.c)

    def corrections(self, biases: np.ndarray) -> np.ndarray:
        """psi_c(B_i) - B_i per unit."""
        return self.psi(biases) - biases


@dataclass(frozen=True)
class Tuning:
    """How cut-offs are chosen: minimax, q-th power criterion, or no truncation."""

    kind: str = MINIMAX
    q: float = 4.0
    scan_points: int = DEFAULT_SCAN_POINTS

    def __post_init__(self):
        if self.kind not in TUNING_KINDS:
            raise SpecError(f"tuning must be one of {TUNING_KINDS}, got {self.kind}")
        if self.kind == QPOW and not self.q > 1:
            raise UnsupportedExponent(f"q-th power tuning needs q > 1, got q={self.q}")
        if self.scan_points < 2:
            raise SpecError("scan_points must be at least 2")

    @classmethod
    def minimax(cls) -> "Tuning":
        return cls(MINIMAX)

    @classmethod
    def qpow(cls, q: float = 4.0, scan_points: int = DEFAULT_SCAN_POINTS) -> "Tuning":
        return cls(QPOW, q, scan_points)

    @classmethod
    def none(cls) -> "Tuning":
        return cls(NONE)

    @property
    def label(self) -> str:
        if self.kind == QPOW:
            return f"qpow(q={self.q:g})"
        return self.kind


@dataclass
class RobustTotalEstimate:
    """
    Estimated total curve with the tuning that produced it.

    `tuning` and `delta` are indexed by the tuned component (grid point, score or coefficient);
    `unit_corrections` holds psi(B_1i) - B_1i per sampled unit mapped to the time domain.
    """

    curve: np.ndarray
    method: str
    tuning: np.ndarray
    delta: np.ndarray
    unit_corrections: Optional[np.ndarray] = None
    extras: Dict[str, Any] = field(default_factory=dict)

    def metadata(self) -> Dict[str, Any]:
        meta = {
            "method": self.method,
            "tuning_constants": np.asarray(self.tuning).tolist(),
            "delta": np.asarray(self.delta).tolist(),
        }
        for key, value in self.extras.items():
            if isinstance(value, (str, int, float, bool)) or value is None:
                meta[key] = value
        return meta


def huber(z, c):
    """psi_c(z) = sgn(z) min(|z|, c); works elementwise on arrays."""
    if np.any(np.asarray(c) < 0):
        raise SpecError("Huber threshold must be nonnegative")
    result = np.clip(z, -np.asarray(c), np.asarray(c))
    return float(result) if np.ndim(result) == 0 else result


def delta(biases, c: float) -> float:
    """Delta(c) = sum_i (psi_c(B_i) - B_i)."""
    b = np.asarray(biases, dtype=float)
    return float(np.sum(np.clip(b, -c, c) - b))


def minimax_delta(biases) -> float:
    """Correction minimizing max_i |B_i + Delta|: -(min + max) / 2."""
    b = np.asarray(biases, dtype=float)
    if b.size == 0:
        raise EmptySample("minimax tuning needs at least one conditional bias")
    return -0.5 * (float(b.min()) + float(b.max()))


def cutoff_for_delta(biases, target: float, tol: float = 1e-9) -> float:
    """
    Largest c in [0, max|B|] with Delta(c) == target.

    Delta is piecewise linear in c with knots at the sorted |B_i|; each piece is inverted exactly.
    When no c attains the target the knot closest in Delta is returned.
    """
    b = np.asarray(biases, dtype=float)
    if b.size == 0:
        raise EmptySample("cut-off search needs at least one conditional bias")
    order = np.argsort(np.abs(b))
    a = np.abs(b)[order]
    signed = b[order]
    knots = np.concatenate([[0.0], a])
    scale = max(1.0, float(a[-1]), abs(target))

    # on (knots[k], knots[k+1]) units order[k:] are truncated
    suffix_sign = np.concatenate([np.cumsum(np.sign(signed)[::-1])[::-1], [0.0]])
    suffix_sum = np.concatenate([np.cumsum(signed[::-1])[::-1], [0.0]])
    for k in range(a.size - 1, -1, -1):
        lo, hi = knots[k], knots[k + 1]
        slope, offset = suffix_sign[k], suffix_sum[k]
        if slope == 0:
            if abs(-offset - target) <= tol * scale:
                return float(hi)
            continue
        c = (target + offset) / slope
        if lo - tol * scale <= c <= hi + tol * scale:
            return float(min(max(c, lo), hi))

    values = np.array([delta(b, c) for c in knots])
    best = int(np.argmin(np.abs(values - target)))
    logger.warning(f"Delta={target:.6g} is not attained on [0, {a[-1]:.6g}]; using c={knots[best]:.6g}")
    return float(knots[best])


def _qpow_objective(u: np.ndarray, c: float, q: float) -> float:
    shift = np.sum(np.clip(u, -c, c) - u)
    return float(np.sum(np.abs(u + shift) ** q))


def qpow_tune(biases, q: float, scan_points: int = DEFAULT_SCAN_POINTS) -> Tuple[float, float]:
    """
    Global minimizer of sum_i |B_i + Delta(c)|^q over c in [0, max|B|].

    A dense scan brackets every local minimum; the best brackets are refined with bounded
    Brent. Ties go to the largest c (least truncation).

    Returns:
        (c_opt, Delta(c_opt))
    """
    if not q > 1:
        raise UnsupportedExponent(f"q-th power tuning needs q > 1, got q={q}")
    b = np.asarray(biases, dtype=float)
    if b.size == 0:
        raise EmptySample("q-th power tuning needs at least one conditional bias")
    top = float(np.max(np.abs(b)))
    if top == 0.0:
        return 0.0, 0.0

    # objective is positively homogeneous: work on B / max|B| to keep |.|^q finite
    u = b / top
    grid = np.linspace(0.0, 1.0, scan_points)
    shifts = np.sum(np.clip(u[None, :], -grid[:, None], grid[:, None]) - u[None, :], axis=1)
    values = np.sum(np.abs(u[None, :] + shifts[:, None]) ** q, axis=1)

    left = np.concatenate([[np.inf], values[:-1]])
    right = np.concatenate([values[1:], [np.inf]])
    minima = np.flatnonzero((values <= left) & (values <= right))
    minima = minima[np.argsort(values[minima], kind="stable")][:MAX_REFINEMENTS]

    candidates = list(zip(grid.tolist(), values.tolist()))
    for k in minima:
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, scan_points - 1)]
        if hi <= lo:
            continue
        result = minimize_scalar(lambda c: _qpow_objective(u, c, q), bounds=(lo, hi),
                                 method="bounded", options={"xatol": 1e-11})
        candidates.append((float(result.x), float(result.fun)))

    best = min(f for _, f in candidates)
    c_norm = max(c for c, f in candidates if f <= best + 1e-12 * max(best, 1e-300))
    c_opt = c_norm * top
    logger.debug(f"qpow(q={q}) cut-off {c_opt:.6g} from {len(minima)} bracket(s)")
    return c_opt, delta(b, c_opt)


def tune_vector(biases: np.ndarray, tuning: Tuning) -> Tuple[float, float, np.ndarray]:
    """Cut-off, correction and per-unit corrections psi_c(B_i) - B_i for one bias vector."""
    b = np.asarray(biases, dtype=float)
    if b.size == 0:
        raise EmptySample("tuning needs at least one conditional bias")
    if tuning.kind == NONE:
        return float(np.max(np.abs(b))), 0.0, np.zeros_like(b)
    if tuning.kind == MINIMAX:
        d = minimax_delta(b)
        c = cutoff_for_delta(b, d)
    else:
        c, d = qpow_tune(b, tuning.q, tuning.scan_points)
    params = HuberParams(c)
    return params.c, d, params.corrections(b)


def tune_columns(matrix: np.ndarray, tuning: Tuning) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Apply `tune_vector` to every column of an (n, P) bias matrix."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    n, P = matrix.shape
    cutoffs = np.empty(P)
    deltas = np.empty(P)
    corrections = np.empty((n, P))
    for p in range(P):
        cutoffs[p], deltas[p], corrections[:, p] = tune_vector(matrix[:, p], tuning)
    return cutoffs, deltas, corrections


def r1_estimate(ht: np.ndarray, biases: CondBiasMatrix, tuning: Tuning) -> RobustTotalEstimate:
    """Pointwise robust total: ht(t_d) + Delta_d, each grid point tuned on its own bias column."""
    cutoffs, deltas, corrections = tune_columns(biases.rows, tuning)
    curve = np.asarray(ht, dtype=float) + deltas
    logger.debug(f"R1 {tuning.label}: max |Delta| = {np.max(np.abs(deltas)):.6g}")
    return RobustTotalEstimate(
        curve=curve,
        method=f"R1_{tuning.label}",
        tuning=cutoffs,
        delta=deltas,
        unit_corrections=corrections,
        extras={"tuning": tuning.label},
    )
