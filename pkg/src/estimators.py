"""
Estimator registry: names such as `r1_minimax`, `r2`, `r3_raw` or `r4_q10` resolved to a callable
configuration shared by the CLI, the MSE estimators and the Monte Carlo harness.
"""

import logging
import re
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .curves import TimeGrid
from .exceptions import SpecError
from .ht_estimator import conditional_bias_estimated, ht_total
from .robust_depth import DEFAULT_ALPHA_SCAN, DEFAULT_WINDOW, r4_estimate
from .robust_pointwise import DEFAULT_SCAN_POINTS, RobustTotalEstimate, Tuning, r1_estimate
from .robust_spca import SPHERICAL, r2_estimate
from .robust_wavelet import make_basis, r3_estimate
from .sampling import InclusionProbs, SampleDraw

logger = logging.getLogger(__name__)

KINDS = ("ht", "r1", "r2", "r3", "r4")
DEFAULT_ESTIMATORS = ["ht", "r1_minimax", "r1_q4", "r1_q10", "r2", "r3", "r4"]

_NAME = re.compile(r"^(r[1-4])(?:_(minimax|raw|qpow|q(\d+(?:\.\d+)?)))?$")


@dataclass(frozen=True)
class EstimatorSpec:
    """A named estimator with every setting it needs."""

    name: str
    kind: str
    tuning: Tuning = field(default_factory=Tuning.minimax)
    K: int = 5
    wavelet: str = "symlet10"
    levels: Optional[int] = None
    window: int = DEFAULT_WINDOW
    alpha_scan: int = DEFAULT_ALPHA_SCAN
    spca_tol: float = 1e-8
    spca_max_iter: int = 500
    lenient_median: bool = False
    median_linearization: str = SPHERICAL

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"estimator kind must be one of {KINDS}, got {self.kind}")

    def describe(self) -> dict:
        info = {"estimator": self.name, "kind": self.kind}
        if self.kind != "ht":
            info["tuning"] = self.tuning.label
        if self.kind == "r2":
            info["K"] = self.K
            info["median_linearization"] = self.median_linearization
        if self.kind == "r3":
            info["wavelet"] = self.wavelet
            info["levels"] = self.levels
        if self.kind == "r4":
            info["window"] = self.window
        return info


def parse_estimator(name: str, defaults: Optional[EstimatorSpec] = None) -> EstimatorSpec:
    """
    Resolve a registry name.

    `ht`, `rX` (default tuning), `rX_minimax`, `rX_raw` (no truncation), `rX_qpow` (default q) and
    `rX_q<q>` for X in 1..4. Settings not fixed by the name come from `defaults`.
    """
    base = defaults or EstimatorSpec(name="defaults", kind="r1")
    if name == "ht":
        return replace(base, name=name, kind="ht", tuning=Tuning.none())
    match = _NAME.match(name)
    if not match:
        raise SpecError(f"unknown estimator '{name}'")
    kind, suffix, q = match.group(1), match.group(2), match.group(3)
    scan = base.tuning.scan_points
    if suffix is None:
        tuning = base.tuning
    elif suffix == "minimax":
        tuning = Tuning.minimax()
    elif suffix == "raw":
        tuning = Tuning.none()
    elif suffix == "qpow":
        tuning = Tuning.qpow(base.tuning.q, scan)
    else:
        tuning = Tuning.qpow(float(q), scan)
    return replace(base, name=name, kind=kind, tuning=tuning)


def parse_estimators(names: List[str], defaults: Optional[EstimatorSpec] = None) -> List[EstimatorSpec]:
    return [parse_estimator(name, defaults) for name in names]


def default_spec_from_config(config) -> EstimatorSpec:
    """Registry defaults taken from a ConfigManager."""
    kind = config.get("tuning.kind", "minimax")
    q = float(config.get("tuning.q", 4.0))
    scan = int(config.get("tuning.scan_points", DEFAULT_SCAN_POINTS))
    tuning = Tuning(kind, q, scan) if kind != "qpow" else Tuning.qpow(q, scan)
    return EstimatorSpec(
        name="defaults",
        kind="r1",
        tuning=tuning,
        K=int(config.get("spca.K", 5)),
        wavelet=config.get("wavelet.family", "symlet10"),
        levels=config.get("wavelet.levels"),
        window=int(config.get("depth.window", DEFAULT_WINDOW)),
        alpha_scan=int(config.get("depth.scan_points", DEFAULT_ALPHA_SCAN)),
        spca_tol=float(config.get("spca.tol", 1e-8)),
        spca_max_iter=int(config.get("spca.max_iter", 500)),
        lenient_median=bool(config.get("spca.lenient", False)),
        median_linearization=config.get("spca.median_linearization", SPHERICAL),
    )


def run_estimator(spec: EstimatorSpec, sample: SampleDraw, probs: InclusionProbs, y: np.ndarray,
                  grid: TimeGrid, N: float, multipliers: Optional[np.ndarray] = None) -> RobustTotalEstimate:
    """
    Evaluate one estimator on a sample.

    Args:
        spec: estimator configuration
        sample: drawn sample
        probs: inclusion probabilities of the sample's design
        y: (n, D) sampled curves in sample order
        grid: population grid
        N: population size
        multipliers: optional per-unit factors applied wherever d_i enters (replicate weights)
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if spec.kind == "r2":
        return r2_estimate(sample, probs, y, grid, N, spec.K, spec.tuning, multipliers,
                           spec.spca_tol, spec.spca_max_iter, spec.lenient_median)
    if spec.kind == "r3":
        basis = make_basis(grid.D, spec.wavelet, spec.levels)
        return r3_estimate(sample, probs, y, basis, spec.tuning, multipliers)

    scaled = y if multipliers is None else np.asarray(multipliers, dtype=float)[:, None] * y
    ht = ht_total(sample, scaled)
    if spec.kind == "ht":
        return RobustTotalEstimate(curve=ht, method="HT", tuning=np.zeros(0), delta=np.zeros(grid.D),
                                   unit_corrections=np.zeros_like(y))
    biases = conditional_bias_estimated(sample, probs, scaled)
    if spec.kind == "r1":
        return r1_estimate(ht, biases, spec.tuning)
    return r4_estimate(ht, biases, spec.tuning, spec.window, spec.alpha_scan)
