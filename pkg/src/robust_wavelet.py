"""
Robust total estimation in an orthonormal wavelet basis.

Curves are periodically extended to the next power of two, transformed with PyWavelets in
`periodization` mode (an orthonormal map), robustified coefficient by coefficient and transformed
back.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import pywt

from .exceptions import DimensionError, SpecError
from .ht_estimator import conditional_bias_estimated, ht_total
from .robust_pointwise import RobustTotalEstimate, Tuning, tune_columns
from .sampling import InclusionProbs, SampleDraw

logger = logging.getLogger(__name__)

FAMILIES = {"symlet10": "sym10", "haar": "haar"}
MODE = "periodization"


@dataclass(frozen=True, eq=False)
class WaveletBasis:
    family: str
    D: int
    padded_length: int
    levels: int
    pad_before: int
    pad_after: int
    lengths: tuple

    @property
    def wavelet(self) -> pywt.Wavelet:
        return pywt.Wavelet(FAMILIES[self.family])

    @property
    def Q(self) -> int:
        return self.padded_length


def next_power_of_two(D: int) -> int:
    return 1 << max(0, int(D - 1).bit_length())


def make_basis(D: int, family: str = "symlet10", levels: Optional[int] = None) -> WaveletBasis:
    """
    Basis for curves of length D.

    Args:
        D: curve length
        family: "symlet10" or "haar"
        levels: decomposition depth; defaults to full depth, log2 of the padded length
    """
    if family not in FAMILIES:
        raise SpecError(f"wavelet family must be one of {sorted(FAMILIES)}, got {family}")
    if D < 2:
        raise DimensionError("wavelet expansion needs at least two points")
    P = next_power_of_two(D)
    wavelet = pywt.Wavelet(FAMILIES[family])
    full = int(np.log2(P))
    if levels is None:
        levels = full
    if not 0 <= levels <= full:
        raise SpecError(f"levels must lie in [0, {full}] for padded length {P}, got {levels}")
    pad = P - D
    before = pad // 2
    lengths = tuple(len(c) for c in _wavedec(np.zeros(P), wavelet, levels))
    logger.debug(f"Wavelet basis {family}: D={D}, padded={P}, levels={levels}")
    return WaveletBasis(family, D, P, int(levels), before, pad - before, lengths)


def _wavedec(signal: np.ndarray, wavelet: pywt.Wavelet, levels: int) -> List[np.ndarray]:
    # periodization stays orthonormal past dwt_max_level; pywt still warns about boundary effects
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return pywt.wavedec(signal, wavelet, mode=MODE, level=levels, axis=-1)


def pad(values: np.ndarray, basis: WaveletBasis) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != basis.D:
        raise DimensionError(f"expected curves of length {basis.D}, got {values.shape[-1]}")
    widths = [(0, 0)] * (values.ndim - 1) + [(basis.pad_before, basis.pad_after)]
    return np.pad(values, widths, mode="wrap")


def unpad(values: np.ndarray, basis: WaveletBasis) -> np.ndarray:
    return values[..., basis.pad_before:basis.pad_before + basis.D]


def dwt(values: np.ndarray, basis: WaveletBasis) -> np.ndarray:
    """Concatenated coefficients [cA_J, cD_J, ..., cD_1] along the last axis; accepts (D,) or (n, D)."""
    coeffs = _wavedec(pad(values, basis), basis.wavelet, basis.levels)
    return np.concatenate(coeffs, axis=-1)


def _split(coefs: np.ndarray, basis: WaveletBasis) -> List[np.ndarray]:
    bounds = np.cumsum(basis.lengths)[:-1]
    return np.split(coefs, bounds, axis=-1)


def idwt(coefs: np.ndarray, basis: WaveletBasis) -> np.ndarray:
    """Inverse of `dwt`, cut back to the D original grid points."""
    coefs = np.asarray(coefs, dtype=float)
    if coefs.shape[-1] != basis.padded_length:
        raise DimensionError(f"expected {basis.padded_length} coefficients, got {coefs.shape[-1]}")
    signal = pywt.waverec(_split(coefs, basis), basis.wavelet, mode=MODE, axis=-1)
    return unpad(signal, basis)


def r3_estimate(sample: SampleDraw, probs: InclusionProbs, y: np.ndarray, basis: WaveletBasis,
                tuning: Tuning, multipliers: Optional[np.ndarray] = None) -> RobustTotalEstimate:
    """Robustify every coefficient total with its own cut-off, then reconstruct."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    coefs = dwt(y, basis)
    if multipliers is not None:
        coefs = np.asarray(multipliers, dtype=float)[:, None] * coefs
    totals = ht_total(sample, coefs)
    biases = conditional_bias_estimated(sample, probs, coefs)
    cutoffs, deltas, corrections = tune_columns(biases.rows, tuning)
    curve = idwt(totals + deltas, basis)
    logger.debug(f"R3 {basis.family} {tuning.label}: {np.count_nonzero(deltas)} coefficient(s) corrected")
    return RobustTotalEstimate(
        curve=curve,
        method="R3" if tuning.kind != "none" else "R3_raw",
        tuning=cutoffs,
        delta=deltas,
        unit_corrections=idwt(corrections, basis),
        extras={"tuning": tuning.label, "wavelet": basis.family, "levels": basis.levels,
                "padded_length": basis.padded_length},
    )
