"""
Monte Carlo evaluation of the total estimators.

For a scenario (design, sample size, strata jumpers, estimator list) samples are drawn repeatedly
from a fixed population and every estimator is compared with the true total curve: pointwise
relative bias, MSE relative to the HT estimator and their time averages, plus wall time per call.
"""

import logging
import re
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .curves import CurvePopulation
from .estimators import DEFAULT_ESTIMATORS, EstimatorSpec, parse_estimator, parse_estimators, run_estimator
from .exceptions import RelativeBiasUndefined, SpecError, TooFewReplicates
from .mse import MSE_METHODS, estimate_mse
from .population_io import JumperSpec, apply_strata_jumpers
from .replication import derive_seeds, map_replicates
from .result_writer import ResultWriter
from .sampling import SRS, STR, Design, build_design, draw, enumerate_samples, inclusion_probs, sample_count

logger = logging.getLogger(__name__)

DEFAULT_REPLICATES = 500

SUMMARY_COLUMNS = [
    "scenario", "estimator", "design", "n", "jumper_rate", "replicates",
    "rb_mean", "rmse_mean", "rb_undefined_points", "mean_seconds",
]
SERIES_COLUMNS = ["scenario", "estimator", "t", "rb", "rmse", "bias", "mse"]
MSE_COLUMNS = [
    "scenario", "estimator", "mse_method", "replicates", "bootstrap_reps",
    "rb_mean", "mc_mse_mean", "estimated_mse_mean", "mean_seconds",
]

_LABEL = re.compile(r"^(SRS|STR)(?:-J(\d+(?:\.\d+)?))?$", re.IGNORECASE)


@dataclass(frozen=True)
class Scenario:
    """One cell of the evaluation grid."""

    name: str
    design: str
    n: int
    jumper_rate: float = 0.0
    estimators: Tuple[str, ...] = tuple(DEFAULT_ESTIMATORS)
    replicates: int = DEFAULT_REPLICATES
    seed: int = 0
    enumerate: bool = False
    allocation: str = "neyman"
    workers: int = 1

    @classmethod
    def from_label(cls, label: str, n: int, **kwargs) -> "Scenario":
        """`SRS`, `STR-J0`, `STR-J10`, `STR-J20` (jumper percentage after the J)."""
        match = _LABEL.match(label.strip())
        if not match:
            raise SpecError(f"unknown scenario label '{label}', expected SRS or STR-J<percent>")
        kind = match.group(1).lower()
        rate = float(match.group(2)) / 100.0 if match.group(2) else 0.0
        if kind == SRS and rate > 0:
            raise SpecError("strata jumpers need a stratified design")
        return cls(name=f"{label.upper()}_n{n}", design=kind, n=n, jumper_rate=rate, **kwargs)

    def validate(self) -> None:
        if self.design not in (SRS, STR):
            raise SpecError(f"scenario {self.name}: design must be srs or str, got {self.design}")
        if self.n < 1:
            raise SpecError(f"scenario {self.name}: sample size must be positive")
        if not self.enumerate and self.replicates < 2:
            raise TooFewReplicates(f"scenario {self.name}: need at least 2 replicates, got {self.replicates}")
        if self.jumper_rate and self.design != STR:
            raise SpecError(f"scenario {self.name}: strata jumpers need a stratified design")


@dataclass
class RuntimeStats:
    """Wall-clock accounting for one estimator."""

    calls: int = 0
    total_seconds: float = 0.0
    min_seconds: float = float("inf")
    max_seconds: float = 0.0

    def add(self, seconds: float) -> None:
        self.calls += 1
        self.total_seconds += seconds
        self.min_seconds = min(self.min_seconds, seconds)
        self.max_seconds = max(self.max_seconds, seconds)

    @property
    def mean_seconds(self) -> float:
        return self.total_seconds / self.calls if self.calls else float("nan")


@dataclass
class EstimatorSummary:
    """Pointwise Monte Carlo results of one estimator in one scenario."""

    scenario: Scenario
    estimator: str
    replicates: int
    bias: np.ndarray
    mse: np.ndarray
    rb: np.ndarray
    rmse: np.ndarray
    rb_undefined: np.ndarray
    runtime: RuntimeStats

    @property
    def rb_mean(self) -> float:
        return float(np.mean(self.rb))

    @property
    def rmse_mean(self) -> float:
        finite = self.rmse[np.isfinite(self.rmse)]
        return float(finite.mean()) if finite.size else float("nan")


@dataclass
class EvalTable:
    """Monte Carlo results, one entry per (scenario, estimator)."""

    points: np.ndarray
    entries: List[EstimatorSummary] = field(default_factory=list)

    def extend(self, other: "EvalTable") -> None:
        self.entries.extend(other.entries)

    def entry(self, scenario: str, estimator: str) -> EstimatorSummary:
        for item in self.entries:
            if item.scenario.name == scenario and item.estimator == estimator:
                return item
        raise KeyError(f"no result for scenario {scenario}, estimator {estimator}")

    def summary_frame(self) -> pd.DataFrame:
        rows = [{
            "scenario": e.scenario.name,
            "estimator": e.estimator,
            "design": e.scenario.design,
            "n": e.scenario.n,
            "jumper_rate": e.scenario.jumper_rate,
            "replicates": e.replicates,
            "rb_mean": e.rb_mean,
            "rmse_mean": e.rmse_mean,
            "rb_undefined_points": int(np.count_nonzero(e.rb_undefined)),
            "mean_seconds": e.runtime.mean_seconds,
        } for e in self.entries]
        return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)

    def series_frame(self) -> pd.DataFrame:
        """Long format: one row per (scenario, estimator, grid point)."""
        if not self.entries:
            return pd.DataFrame(columns=SERIES_COLUMNS)
        parts = [pd.DataFrame({
            "scenario": e.scenario.name,
            "estimator": e.estimator,
            "t": self.points,
            "rb": e.rb,
            "rmse": e.rmse,
            "bias": e.bias,
            "mse": e.mse,
        }) for e in self.entries]
        return pd.concat(parts, ignore_index=True)[SERIES_COLUMNS]


def scenario_design(pop: CurvePopulation, scenario: Scenario) -> Tuple[CurvePopulation, Design]:
    """The population as the design sees it (jumpers applied) and the scenario's design."""
    scenario.validate()
    if scenario.jumper_rate > 0:
        pop = apply_strata_jumpers(pop, JumperSpec(rate=scenario.jumper_rate, seed=scenario.seed))
    design = build_design(pop, scenario.design, scenario.n, scenario.allocation)
    return pop, design


def relative_bias(bias: np.ndarray, total: np.ndarray, strict: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    100 * bias / total per grid point.

    Where the total is zero the absolute bias is reported instead and the point is flagged;
    with `strict` that case raises RelativeBiasUndefined.
    """
    undefined = total == 0
    if np.any(undefined):
        if strict:
            raise RelativeBiasUndefined(f"true total is zero at {int(undefined.sum())} grid point(s)")
        logger.warning(f"Relative bias undefined at {int(undefined.sum())} grid point(s); reporting absolute bias")
    safe = np.where(undefined, 1.0, total)
    rb = np.where(undefined, bias, 100.0 * bias / safe)
    return rb, undefined


def relative_mse(mse: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """100 * mse / reference, NaN where the reference MSE is zero."""
    out = np.full(mse.shape, np.nan)
    positive = reference > 0
    out[positive] = 100.0 * mse[positive] / reference[positive]
    return out


def run_monte_carlo(pop: CurvePopulation, scenario: Scenario, defaults: Optional[EstimatorSpec] = None,
                    strict_rb: bool = False) -> EvalTable:
    """
    Evaluate the scenario's estimators by repeated sampling.

    Args:
        pop: population with the true curves (and strata for stratified designs)
        scenario: design, sample size, jumpers, estimators, replicate count and seed
        defaults: settings for estimators not fixed by their registry names
        strict_rb: raise instead of flagging grid points where the true total is zero

    Returns:
        EvalTable with one entry per requested estimator
    """
    sampled_pop, design = scenario_design(pop, scenario)
    specs = parse_estimators(list(scenario.estimators), defaults)
    ht_spec = parse_estimator("ht", defaults)
    all_specs = specs if any(s.kind == "ht" for s in specs) else specs + [ht_spec]
    probs = inclusion_probs(design)
    grid = pop.grid
    truth = pop.values.sum(axis=0)

    if scenario.enumerate:
        items = list(enumerate_samples(design))
        logger.info(f"Scenario {scenario.name}: enumerating all {len(items)} samples of {design.describe()}")
    else:
        items = derive_seeds(scenario.seed, scenario.replicates)
        logger.info(f"Scenario {scenario.name}: {scenario.replicates} replicates of {design.describe()}")

    def replicate(item):
        sample = item if scenario.enumerate else draw(design, item)
        y = sampled_pop.values[sample.units]
        curves, seconds = [], []
        for spec in all_specs:
            start = time.perf_counter()
            result = run_estimator(spec, sample, probs, y, grid, design.N)
            seconds.append(time.perf_counter() - start)
            curves.append(result.curve)
        return np.vstack(curves), seconds

    results = map_replicates(replicate, items, scenario.workers)
    I = len(results)
    estimates = np.stack([curves for curves, _ in results])
    runtimes = [RuntimeStats() for _ in all_specs]
    for _, seconds in results:
        for stats, value in zip(runtimes, seconds):
            stats.add(value)

    errors = estimates - truth[None, None, :]
    bias = errors.mean(axis=0)
    mse = (errors ** 2).mean(axis=0)
    ht_index = next(k for k, s in enumerate(all_specs) if s.kind == "ht")

    table = EvalTable(points=grid.points.copy())
    for k, spec in enumerate(specs):
        rb, undefined = relative_bias(bias[k], truth, strict_rb)
        table.entries.append(EstimatorSummary(
            scenario=scenario,
            estimator=spec.name,
            replicates=I,
            bias=bias[k],
            mse=mse[k],
            rb=rb,
            rmse=relative_mse(mse[k], mse[ht_index]),
            rb_undefined=undefined,
            runtime=runtimes[k],
        ))
        logger.info(f"{scenario.name} {spec.name}: RB {table.entries[-1].rb_mean:.3f}%, "
                    f"RMSE {table.entries[-1].rmse_mean:.2f}%, {runtimes[k].mean_seconds * 1e3:.2f} ms/call")
    return table


def run_scenarios(pop: CurvePopulation, scenarios: Sequence[Scenario],
                  defaults: Optional[EstimatorSpec] = None) -> EvalTable:
    table = EvalTable(points=pop.grid.points.copy())
    for scenario in scenarios:
        table.extend(run_monte_carlo(pop, scenario, defaults))
    return table


def emit_tables(table: EvalTable, output: Union[ResultWriter, str], prefix: str = "simulation",
                metadata: Optional[Dict] = None) -> List:
    """
    Write `<prefix>_summary.csv`, `<prefix>_summary.json` and the long-format `<prefix>_series.csv`.

    Each CSV gets its metadata sidecar from the writer.
    """
    writer = output if isinstance(output, ResultWriter) else ResultWriter(output)
    summary = table.summary_frame()
    meta = dict(metadata or {})
    meta["scenarios"] = sorted({e.scenario.name for e in table.entries})
    meta["seeds"] = {e.scenario.name: e.scenario.seed for e in table.entries}
    paths = [
        writer.write_frame(f"{prefix}_summary.csv", summary, meta),
        writer.write_json(f"{prefix}_summary.json", {
            "columns": SUMMARY_COLUMNS,
            "rows": summary.to_dict(orient="records"),
            "metadata": meta,
        }),
        writer.write_frame(f"{prefix}_series.csv", table.series_frame(), meta),
    ]
    return paths


def evaluate_mse_estimators(pop: CurvePopulation, scenario: Scenario, estimator: str,
                            methods: Sequence[str] = MSE_METHODS, reps: int = 200, seed: int = 0,
                            defaults: Optional[EstimatorSpec] = None) -> pd.DataFrame:
    """
    Relative bias (%) of each MSE estimator of `estimator` against its Monte Carlo MSE.

    Every replicate draws one sample, computes the estimate and each requested MSE estimate
    (bootstraps with `reps` replicates). The pointwise relative bias
    100 * (mean estimated MSE - MC MSE) / MC MSE is averaged over grid points with positive MC MSE.
    """
    for method in methods:
        if method not in MSE_METHODS:
            raise SpecError(f"unknown MSE method: {method}")
    sampled_pop, design = scenario_design(pop, scenario)
    if scenario.enumerate:
        raise SpecError("MSE evaluation draws samples at random; enumeration is not supported")
    spec = parse_estimator(estimator, defaults)
    probs = inclusion_probs(design)
    grid = pop.grid
    truth = pop.values.sum(axis=0)
    children = derive_seeds(scenario.seed, scenario.replicates)
    logger.info(f"MSE evaluation of {spec.name} over {scenario.replicates} replicates, methods {list(methods)}")

    def replicate(child):
        sample_seed, boot_seed = child.spawn(2)
        sample = draw(design, sample_seed)
        y = sampled_pop.values[sample.units]
        estimate = run_estimator(spec, sample, probs, y, grid, design.N)
        boot = int(boot_seed.generate_state(1)[0])
        reports, seconds = [], []
        for method in methods:
            start = time.perf_counter()
            reports.append(estimate_mse(method, spec, estimate, sample, probs, y, grid, reps, boot).mse)
            seconds.append(time.perf_counter() - start)
        return estimate.curve, reports, seconds

    results = map_replicates(replicate, children, scenario.workers)
    errors = np.vstack([curve for curve, _, _ in results]) - truth
    mc_mse = (errors ** 2).mean(axis=0)
    positive = mc_mse > 0

    rows = []
    for k, method in enumerate(methods):
        estimated = np.vstack([reports[k] for _, reports, _ in results]).mean(axis=0)
        rb = 100.0 * (estimated[positive] - mc_mse[positive]) / mc_mse[positive]
        rows.append({
            "scenario": scenario.name,
            "estimator": spec.name,
            "mse_method": method,
            "replicates": len(results),
            "bootstrap_reps": reps if method != "linearization" else 0,
            "rb_mean": float(rb.mean()) if rb.size else float("nan"),
            "mc_mse_mean": float(mc_mse.mean()),
            "estimated_mse_mean": float(estimated.mean()),
            "mean_seconds": float(np.mean([s[k] for _, _, s in results])),
        })
        logger.info(f"{spec.name} {method}: RB of MSE estimate {rows[-1]['rb_mean']:.2f}%")
    return pd.DataFrame(rows, columns=MSE_COLUMNS)


def describe_scenario(scenario: Scenario, pop: CurvePopulation) -> Dict:
    """Metadata echo for output sidecars."""
    _, design = scenario_design(pop, scenario)
    info = {
        "scenario": scenario.name,
        "design": design.describe(),
        "n": scenario.n,
        "jumper_rate": scenario.jumper_rate,
        "estimators": list(scenario.estimators),
        "replicates": sample_count(design) if scenario.enumerate else scenario.replicates,
        "seed": scenario.seed,
        "enumerate": scenario.enumerate,
        "allocation": scenario.allocation if scenario.design == STR else None,
    }
    return info
