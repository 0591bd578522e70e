"""
Population ingestion, synthetic load-curve generation and strata-jumper contamination.

CSV layout: header row `t_1,...,t_D[,stratum][,aux]`, one unit per row, row order is unit order.
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from .curves import CurvePopulation, TimeGrid
from .exceptions import FormatError, MissingData, NotEnoughStrata, ParseError, SpecError
from .result_writer import atomic_write

logger = logging.getLogger(__name__)

STRATUM_COLUMN = "stratum"
AUX_COLUMN = "aux"


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic skewed load-curve population."""

    N: int = 2000
    D: int = 48
    n_strata: int = 5
    daily_period: int = 48
    outlier_fraction: float = 0.02
    outlier_scale: float = 8.0
    seed: int = 0
    level_sigma: float = 0.8
    noise_sd: float = 0.1
    amplitude: float = 0.5
    baseline: float = 1.0

    def validate(self) -> None:
        errors = []
        if self.N < 10:
            errors.append("N must be at least 10")
        if self.D < 8:
            errors.append("D must be at least 8")
        if not 0.0 <= self.outlier_fraction < 0.5:
            errors.append("outlier_fraction must lie in [0, 0.5)")
        if self.outlier_scale < 1.0:
            errors.append("outlier_scale must be at least 1")
        if not 1 <= self.n_strata <= self.N:
            errors.append("n_strata must lie in [1, N]")
        if self.daily_period < 1:
            errors.append("daily_period must be positive")
        if self.level_sigma < 0 or self.noise_sd < 0:
            errors.append("level_sigma and noise_sd must be nonnegative")
        if not 0.0 <= self.amplitude < 1.0:
            errors.append("amplitude must lie in [0, 1)")
        if self.baseline <= 0:
            errors.append("baseline must be positive")
        if errors:
            raise SpecError("; ".join(errors))


@dataclass(frozen=True)
class JumperSpec:
    """Fraction of units to move to a wrong stratum."""

    rate: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.rate <= 1.0:
            raise SpecError("jumper rate must lie in [0, 1]")


def _check_shape(path: Path) -> int:
    """Return the header width after checking that no row is ragged."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path} is empty")
        width = len(header)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise FormatError(f"{path}:{line_no}: expected {width} fields, found {len(row)}")
    return width


def load_population(path: Union[str, Path], format: str = "csv", quadrature: str = "trapezoid") -> CurvePopulation:
    """
    Read a population of curves from a CSV file.

    Args:
        path: CSV file, one unit per row
        format: only "csv" is supported
        quadrature: quadrature mode of the grid built for the curves

    Returns:
        Validated CurvePopulation with unit order equal to row order
    """
    if format != "csv":
        raise FormatError(f"unsupported population format: {format}")
    path = Path(path)
    if not path.exists():
        raise FormatError(f"population file not found: {path}")

    _check_shape(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.ParserError as e:
        raise FormatError(f"{path}: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise FormatError(f"{path} is empty") from e

    if frame.shape[0] == 0:
        raise FormatError(f"{path} has a header but no units")
    if frame.isna().to_numpy().any():
        raise FormatError(f"{path} has rows with too few fields")

    frame = frame.apply(lambda column: column.str.strip())
    blank = frame == ""
    if blank.to_numpy().any():
        row, col = np.argwhere(blank.to_numpy())[0]
        raise MissingData(f"{path}: missing value in row {row + 1}, column '{frame.columns[col]}'")

    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ParseError(
            f"{path}: non-numeric value '{frame.iat[row, col]}' in row {row + 1}, column '{frame.columns[col]}'"
        )

    value_columns = [c for c in frame.columns if c not in (STRATUM_COLUMN, AUX_COLUMN)]
    if len(value_columns) < 2:
        raise FormatError(f"{path}: at least two curve columns are required")
    values = frame[value_columns].to_numpy(dtype=str).astype(float)
    if not np.all(np.isfinite(values)):
        raise ParseError(f"{path}: curve values must be finite")

    stratum = None
    if STRATUM_COLUMN in frame.columns:
        raw = numeric[STRATUM_COLUMN].to_numpy(dtype=float)
        if np.any(raw != np.round(raw)) or np.any(raw < 1):
            raise ParseError(f"{path}: stratum labels must be positive integers")
        stratum = raw.astype(int)
    auxiliary = None
    if AUX_COLUMN in frame.columns:
        auxiliary = frame[AUX_COLUMN].to_numpy(dtype=str).astype(float)

    grid = TimeGrid.uniform(len(value_columns), mode=quadrature)
    pop = CurvePopulation(values, grid, stratum=stratum, auxiliary=auxiliary, name=path.stem)
    logger.info(f"Loaded population from {path}: N={pop.N}, D={pop.D}, H={pop.H}")
    return pop


def population_frame(pop: CurvePopulation) -> pd.DataFrame:
    frame = pd.DataFrame(pop.values, columns=[f"t_{d + 1}" for d in range(pop.D)])
    if pop.stratum is not None:
        frame[STRATUM_COLUMN] = pop.stratum
    if pop.auxiliary is not None:
        frame[AUX_COLUMN] = pop.auxiliary
    return frame


def write_population(pop: CurvePopulation, path: Union[str, Path]) -> Path:
    """Write `pop` in the layout `load_population` reads, replacing the target atomically."""
    path = Path(path)
    frame = population_frame(pop)
    try:
        atomic_write(path, lambda temp: frame.to_csv(temp, index=False, float_format="%.17g"))
    except PermissionError as e:
        logger.error(f"Permission error writing population to {path}: {e}")
        raise
    except OSError as e:
        logger.error(f"OS error writing population to {path}: {e}")
        raise
    logger.info(f"Wrote population (N={pop.N}, D={pop.D}) to {path}")
    return path


def quantile_strata(aux: np.ndarray, H: int) -> np.ndarray:
    """Labels 1..H from equal-count quantile classes of `aux` (ties by unit order)."""
    ranks = np.empty(aux.size, dtype=int)
    ranks[np.argsort(aux, kind="stable")] = np.arange(aux.size)
    return 1 + (ranks * H) // aux.size


def generate_population(spec: SyntheticSpec, quadrature: str = "trapezoid") -> CurvePopulation:
    """
    Skewed synthetic load curves with a daily cycle.

    Each unit carries a log-normal level; a fraction of units has that level multiplied by
    `outlier_scale`. Strata are quantile classes of a noisy prior-period total.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    N, D = spec.N, spec.D

    level = rng.lognormal(mean=0.0, sigma=spec.level_sigma, size=N)
    phase = rng.uniform(-0.5, 0.5, size=N)
    noise = rng.standard_normal((N, D))
    aux_noise = rng.standard_normal(N)
    order = rng.permutation(N)

    n_outliers = int(math.floor(spec.outlier_fraction * N + 0.5))
    level[order[:n_outliers]] *= spec.outlier_scale

    t = np.arange(D, dtype=float)
    profile = 1.0 + spec.amplitude * np.sin(2.0 * np.pi * t[None, :] / spec.daily_period + phase[:, None])
    values = spec.baseline * level[:, None] * (profile + spec.noise_sd * noise)
    values = np.maximum(values, 0.0)

    aux = spec.baseline * level * D * np.exp(0.1 * aux_noise)
    stratum = quantile_strata(aux, spec.n_strata)

    grid = TimeGrid.uniform(D, mode=quadrature)
    logger.info(f"Generated synthetic population N={N}, D={D}, H={spec.n_strata}, outliers={n_outliers}")
    return CurvePopulation(values, grid, stratum=stratum, auxiliary=aux, name=f"synthetic_{spec.seed}")


def apply_strata_jumpers(pop: CurvePopulation, spec: JumperSpec) -> CurvePopulation:
    """Move round(rate * N) uniformly chosen units to a uniformly chosen different stratum."""
    spec.validate()
    if pop.stratum is None or pop.H < 2:
        raise NotEnoughStrata("strata jumpers need a stratified population with at least two strata")
    k = int(math.floor(spec.rate * pop.N + 0.5))
    if k == 0:
        return pop

    rng = np.random.default_rng(spec.seed)
    labels: List[int] = pop.strata_labels
    H = len(labels)
    position = {h: p for p, h in enumerate(labels)}

    movers = rng.choice(pop.N, size=k, replace=False)
    offsets = rng.integers(1, H, size=k)
    new_stratum = pop.stratum.copy()
    for unit, offset in zip(movers, offsets):
        new_stratum[unit] = labels[(position[int(pop.stratum[unit])] + int(offset)) % H]

    emptied = set(labels) - set(np.unique(new_stratum).tolist())
    if emptied:
        logger.warning(f"Strata {sorted(emptied)} lost all their units to jumpers")
    logger.info(f"Moved {k} of {pop.N} units to a wrong stratum")
    return pop.with_strata(new_stratum)


def strata_sizes_summary(pop: CurvePopulation) -> Optional[str]:
    sizes = pop.stratum_sizes()
    if not sizes:
        return None
    return ", ".join(f"N_{h}={n}" for h, n in sizes.items())
