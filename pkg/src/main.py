"""
Main entry point for curvesurvey.
Wires population ingestion, total estimation, MSE estimation and Monte Carlo simulation subcommands.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from . import __version__
from .config_manager import ConfigManager, ConfigValidationError
from .curves import CurvePopulation
from .estimators import KINDS, EstimatorSpec, default_spec_from_config, parse_estimator, run_estimator
from .exceptions import CurveSurveyError, SpecError
from .ht_estimator import ht_total
from .mse import MSE_METHODS, estimate_mse
from .population_io import (JumperSpec, SyntheticSpec, apply_strata_jumpers, generate_population,
                            load_population, strata_sizes_summary, write_population)
from .result_writer import ResultWriter
from .robust_pointwise import RobustTotalEstimate
from .sampling import InclusionProbs, SampleDraw, build_design, draw, inclusion_probs, parse_allocation
from .simulation import Scenario, emit_tables, evaluate_mse_estimators, run_monte_carlo

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DATA_ERROR = 1
EXIT_USAGE = 2


def setup_logging(config: ConfigManager) -> None:
    """Set up console and file logging, falling back to console only."""
    log_level = config.get('logging.log_level', 'INFO')
    try:
        log_dir = Path(config.get('logging.log_dir', 'logs'))
        log_dir.mkdir(parents=True, exist_ok=True)

        logging.basicConfig(
            level=getattr(logging, log_level.upper()),
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            handlers=[
                logging.FileHandler(log_dir / 'curvesurvey.log'),
                logging.StreamHandler(sys.stderr)
            ]
        )
        logging.getLogger().setLevel(getattr(logging, log_level.upper()))
        logging.debug("Logging system initialized")

    except (PermissionError, OSError) as e:
        print(f"Error setting up file logging: {e}", file=sys.stderr)
        logging.basicConfig(
            level=getattr(logging, log_level.upper(), logging.INFO),
            format='%(asctime)s - %(levelname)s - %(message)s',
            stream=sys.stderr
        )
        logging.error(f"Failed to set up file logging: {e}")


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', type=str, help='YAML configuration file')
    common.add_argument('--output-dir', '-o', type=str, help='Directory for result files (overrides config)')
    common.add_argument('--threads', type=int, help='Worker threads for replicate loops')
    common.add_argument('--verbose', '-v', action='store_true', help='Enable debug logging')
    return common


def _population_parser() -> argparse.ArgumentParser:
    source = argparse.ArgumentParser(add_help=False)
    group = source.add_argument_group('population')
    group.add_argument('--input', '-i', type=str, help='Population CSV (t_1..t_D, optional stratum and aux)')
    group.add_argument('--synthetic', action='store_true', help='Generate the synthetic population instead')
    group.add_argument('--n-pop', type=int, help='Synthetic population size N')
    group.add_argument('--d', type=int, help='Synthetic grid size D')
    group.add_argument('--n-strata', type=int, help='Synthetic number of strata')
    group.add_argument('--jumper-rate', type=float, help='Fraction of units moved to a wrong stratum')
    group.add_argument('--population-seed', type=int, help='Seed of the synthetic generator and jumpers')
    return source


def _design_parser() -> argparse.ArgumentParser:
    design = argparse.ArgumentParser(add_help=False)
    group = design.add_argument_group('design and tuning')
    group.add_argument('--design', choices=['srs', 'str'], help='Sampling design')
    group.add_argument('--n', type=int, help='Sample size')
    group.add_argument('--allocation', type=str,
                       help="Stratified allocation: neyman, proportional, or explicit 'h:n_h,h:n_h'")
    group.add_argument('--seed', type=int, help='Seed of the sample draw')
    group.add_argument('--tuning', choices=['minimax', 'qpow', 'none'], help='Tuning constant rule')
    group.add_argument('--q', type=float, help='Exponent of the q-th power criterion')
    group.add_argument('--k', type=int, help='Number of spherical PCA components (r2)')
    group.add_argument('--wavelet', choices=['symlet10', 'haar'], help='Wavelet family (r3)')
    group.add_argument('--levels', type=int, help='Wavelet decomposition depth (r3)')
    group.add_argument('--window', type=int, help='Moving-average window of the depth envelope (r4)')
    return design


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with the generate, estimate, mse and simulate subcommands."""
    common = _common_parser()
    source = _population_parser()
    design = _design_parser()

    parser = argparse.ArgumentParser(
        prog='curvesurvey',
        description="Design-based robust estimation of totals of curves under survey sampling",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  curvesurvey generate --synthetic --n-pop 200 --d 48 --seed 7
  curvesurvey estimate r1 --input pop.csv --design srs --n 40 --seed 1
  curvesurvey estimate r2 --input pop.csv --design str --n 60 --k 3
  curvesurvey mse r1_minimax --input pop.csv --n 40 --method gross --reps 500 --boot-seed 3
  curvesurvey simulate --config run.yaml --threads 4
        """
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    generate = sub.add_parser('generate', parents=[common, source], help='Write a population CSV')
    generate.add_argument('--seed', type=int, help='Seed of the synthetic generator')
    generate.add_argument('--out', type=str, default='population.csv',
                          help='Population file name inside the output directory')

    estimate = sub.add_parser('estimate', parents=[common, source, design], help='Estimate the total curve')
    estimate.add_argument('estimator', choices=list(KINDS), help='Estimator family')

    mse = sub.add_parser('mse', parents=[common, source, design], help='Estimate the pointwise MSE')
    mse.add_argument('estimator', help='Registry name, e.g. r1_minimax, r1_q10, r2, r3_raw, r4')
    mse.add_argument('--method', choices=list(MSE_METHODS), help='MSE estimator')
    mse.add_argument('--reps', type=int, help='Bootstrap replicates')
    mse.add_argument('--boot-seed', type=int, help='Seed of the bootstrap replicates (--seed draws the sample)')

    simulate = sub.add_parser('simulate', parents=[common, source], help='Run the Monte Carlo evaluation')
    simulate.add_argument('--reps', type=int, help='Monte Carlo replicates per scenario')
    simulate.add_argument('--seed', type=int, help='Base seed of the replicates')
    return parser


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments and check flag consistency."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == 'estimate':
        family = args.estimator
    elif args.command == 'mse':
        family = args.estimator.split('_')[0]
    else:
        family = None
    if family is not None:
        if args.k is not None and family != 'r2':
            parser.error("--k applies to r2 only")
        if (args.wavelet is not None or args.levels is not None) and family != 'r3':
            parser.error("--wavelet and --levels apply to r3 only")
        if args.window is not None and family != 'r4':
            parser.error("--window applies to r4 only")
        if args.q is not None and args.tuning not in (None, 'qpow'):
            parser.error("--q needs --tuning qpow")
    if getattr(args, 'input', None) and getattr(args, 'synthetic', False):
        parser.error("--input and --synthetic are mutually exclusive")
    return args


_OVERRIDES = {
    'output_dir': 'output.dir',
    'n_pop': 'population.synthetic.N',
    'd': 'population.synthetic.D',
    'n_strata': 'population.synthetic.n_strata',
    'jumper_rate': 'population.jumper_rate',
    'population_seed': 'population.seed',
    'design': 'design.kind',
    'n': 'design.n',
    'tuning': 'tuning.kind',
    'q': 'tuning.q',
    'k': 'spca.K',
    'wavelet': 'wavelet.family',
    'levels': 'wavelet.levels',
    'window': 'depth.window',
    'method': 'mse.method',
    'boot_seed': 'mse.seed',
    'threads': 'simulation.workers',
}


def load_config(args: argparse.Namespace) -> ConfigManager:
    """Load the configuration, apply command line overrides and validate."""
    if args.config:
        config = ConfigManager(config_path=args.config, create_if_missing=False)
        if not config.loaded:
            raise ConfigValidationError(f"configuration file '{args.config}' is missing or unreadable")
    else:
        config = ConfigManager(config_path=None)

    for attribute, key in _OVERRIDES.items():
        value = getattr(args, attribute, None)
        if value is not None:
            config.set(key, value)

    if getattr(args, 'input', None):
        config.set('population.input', args.input)
    if getattr(args, 'synthetic', False):
        config.set('population.input', None)
    if getattr(args, 'q', None) is not None:
        config.set('tuning.kind', 'qpow')

    seed = getattr(args, 'seed', None)
    if seed is not None:
        seed_key = {'generate': 'population.seed', 'simulate': 'simulation.seed'}.get(args.command, 'design.seed')
        config.set(seed_key, seed)

    reps = getattr(args, 'reps', None)
    if reps is not None:
        config.set('simulation.replicates' if args.command == 'simulate' else 'mse.reps', reps)

    allocation = getattr(args, 'allocation', None)
    if allocation:
        if ':' in allocation:
            config.set('design.allocation', 'explicit')
            config.set('design.explicit_allocation', allocation)
        else:
            config.set('design.allocation', allocation)

    if args.verbose:
        config.set('logging.log_level', 'DEBUG')

    config.raise_if_invalid()
    return config


def resolve_population(config: ConfigManager) -> CurvePopulation:
    """Population from `population.input` or the synthetic generator, strata jumpers applied."""
    quadrature = config.get('curves.quadrature', 'trapezoid')
    source = config.get('population.input')
    if source:
        pop = load_population(source, quadrature=quadrature)
        logger.info(f"Loaded population {pop.name}: N={pop.N}, D={pop.D}")
    else:
        pop = generate_population(synthetic_spec(config), quadrature=quadrature)
    summary = strata_sizes_summary(pop)
    if summary:
        logger.info(f"Strata sizes: {summary}")

    rate = config.get('population.jumper_rate', 0.0)
    if rate:
        pop = apply_strata_jumpers(pop, JumperSpec(rate=rate, seed=config.get('population.seed', 0)))
    return pop


def synthetic_spec(config: ConfigManager) -> SyntheticSpec:
    synthetic = config.get('population.synthetic', {})
    try:
        spec = SyntheticSpec(seed=config.get('population.seed', 0), **synthetic)
    except TypeError as e:
        raise SpecError(f"unknown synthetic population setting: {e}") from e
    spec.validate()
    return spec


def _explicit_allocation(config: ConfigManager) -> Optional[Dict[int, int]]:
    explicit = config.get('design.explicit_allocation')
    if explicit is None:
        return None
    if isinstance(explicit, str):
        return parse_allocation(explicit)
    return {int(h): int(n_h) for h, n_h in explicit.items()}


def _estimator_spec(config: ConfigManager, name: str) -> EstimatorSpec:
    return parse_estimator(name, default_spec_from_config(config))


def _draw_sample(config: ConfigManager, pop: CurvePopulation):
    design = build_design(pop, config.get('design.kind'), config.get('design.n'),
                          config.get('design.allocation', 'neyman'), _explicit_allocation(config))
    logger.info(f"Design {design.describe()}")
    sample = draw(design, config.get('design.seed', 0))
    return design, sample


def command_generate(config: ConfigManager, writer: ResultWriter, args: argparse.Namespace) -> int:
    pop = resolve_population(config)
    path = write_population(pop, writer.output_dir / args.out)
    writer.write_json(f"{args.out}.json", {
        "command": "generate",
        "population": pop.name,
        "N": pop.N,
        "D": pop.D,
        "strata": pop.stratum_sizes(),
        "config": config.as_dict(),
        "version": __version__,
    })
    logger.info(f"Population written to {path}")
    print(path)
    return EXIT_OK


def command_estimate(config: ConfigManager, writer: ResultWriter, args: argparse.Namespace) -> int:
    pop = resolve_population(config)
    design, sample = _draw_sample(config, pop)
    spec = _estimator_spec(config, args.estimator)
    probs = inclusion_probs(design)
    y = pop.values[sample.units]
    result = _run(spec, sample, probs, y, pop, design.N)

    metadata = {
        "command": "estimate",
        "estimator": spec.describe(),
        "result": result.metadata(),
        "design": design.describe(),
        "sample_seed": config.get('design.seed', 0),
        "population": pop.name,
        "config": config.as_dict(),
    }
    path = writer.write_curve(f"estimate_{spec.name}.csv", pop.grid.points,
                              {"total": result.curve, "ht": ht_total(sample, y)}, metadata)
    print(path)
    return EXIT_OK


def command_mse(config: ConfigManager, writer: ResultWriter, args: argparse.Namespace) -> int:
    pop = resolve_population(config)
    design, sample = _draw_sample(config, pop)
    spec = _estimator_spec(config, args.estimator)
    probs = inclusion_probs(design)
    y = pop.values[sample.units]
    result = _run(spec, sample, probs, y, pop, design.N)

    method = config.get('mse.method')
    report = estimate_mse(method, spec, result, sample, probs, y, pop.grid,
                          B=config.get('mse.reps', 1000), seed=config.get('mse.seed', 0),
                          workers=config.get('simulation.workers', 1))
    metadata = {
        "command": "mse",
        "estimator": spec.describe(),
        "result": result.metadata(),
        "mse": report.metadata(),
        "design": design.describe(),
        "sample_seed": config.get('design.seed', 0),
        "bootstrap_seed": config.get('mse.seed', 0),
        "config": config.as_dict(),
    }
    path = writer.write_curve(f"mse_{spec.name}_{method}.csv", pop.grid.points, {
        "estimate": result.curve,
        "mse": report.mse,
        "v_estimate": report.v_estimate,
        "v_difference": report.v_difference,
        "bias_squared": report.bias_term,
    }, metadata)
    print(path)
    return EXIT_OK


def scenarios_from_config(config: ConfigManager) -> List[Scenario]:
    scenarios = []
    for item in config.get('simulation.scenarios', []):
        kind = item['design']
        n = int(item['n'])
        scenarios.append(Scenario(
            name=item.get('name') or f"{kind.upper()}_n{n}",
            design=kind,
            n=n,
            jumper_rate=float(item.get('jumper_rate', 0.0)),
            estimators=tuple(config.get('simulation.estimators', [])),
            replicates=int(config.get('simulation.replicates', 500)),
            seed=int(config.get('simulation.seed', 0)),
            enumerate=bool(config.get('simulation.enumerate', False)),
            allocation=config.get('design.allocation', 'neyman'),
            workers=int(config.get('simulation.workers', 1)),
        ))
    return scenarios


def command_simulate(config: ConfigManager, writer: ResultWriter, args: argparse.Namespace) -> int:
    pop = resolve_population(config)
    defaults = default_spec_from_config(config)
    scenarios = scenarios_from_config(config)

    table = None
    for scenario in scenarios:
        result = run_monte_carlo(pop, scenario, defaults)
        if table is None:
            table = result
        else:
            table.extend(result)
    paths = emit_tables(table, writer, metadata={"command": "simulate", "config": config.as_dict()})

    mse_estimator = config.get('simulation.mse_evaluation.estimator')
    if mse_estimator:
        methods = config.get('simulation.mse_evaluation.methods', list(MSE_METHODS))
        frames = [evaluate_mse_estimators(pop, scenario, mse_estimator, methods,
                                          reps=config.get('simulation.mse_evaluation.reps', 200),
                                          seed=scenario.seed, defaults=defaults)
                  for scenario in scenarios]
        paths.append(writer.write_frame("simulation_mse.csv", pd.concat(frames, ignore_index=True),
                                        {"command": "simulate", "config": config.as_dict()}))
    for path in paths:
        print(path)
    return EXIT_OK


def _run(spec: EstimatorSpec, sample: SampleDraw, probs: InclusionProbs, y: np.ndarray,
         pop: CurvePopulation, N: int) -> RobustTotalEstimate:
    result = run_estimator(spec, sample, probs, y, pop.grid, N)
    logger.info(f"{spec.name}: estimated total averages {np.mean(result.curve):.6g} over the grid")
    return result


COMMANDS = {
    'generate': command_generate,
    'estimate': command_estimate,
    'mse': command_mse,
    'simulate': command_simulate,
}


def _fail(error: Exception) -> int:
    print(f"error: {type(error).__name__}: {error}", file=sys.stderr)
    return EXIT_DATA_ERROR


def main(argv: Optional[List[str]] = None) -> int:
    """Command line entry point; returns the process exit code."""
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    try:
        config = load_config(args)
    except ConfigValidationError as e:
        return _fail(e)

    setup_logging(config)
    try:
        writer = ResultWriter(config.get('output.dir', 'results'))
        logger.info(f"curvesurvey {__version__}: {args.command}")
        return COMMANDS[args.command](config, writer, args)
    except CurveSurveyError as e:
        logger.debug("Command failed", exc_info=True)
        return _fail(e)
    except (PermissionError, OSError) as e:
        logger.error(f"IO failure: {e}")
        return _fail(e)
    except KeyboardInterrupt:
        print("\nInterrupted", file=sys.stderr)
        return EXIT_DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
