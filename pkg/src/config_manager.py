"""
Configuration management for curvesurvey.
Handles YAML configuration files, validation, and runtime settings.
"""

import copy
import yaml
import logging
from pathlib import Path
from typing import Dict, Any, Optional, List

logger = logging.getLogger(__name__)

QUADRATURE_MODES = ['trapezoid', 'unit']
DESIGN_KINDS = ['srs', 'str']
ALLOCATIONS = ['neyman', 'proportional', 'explicit']
TUNING_KINDS = ['minimax', 'qpow', 'none']
MEDIAN_LINEARIZATIONS = ['hessian', 'spherical']
WAVELET_FAMILIES = ['symlet10', 'haar']
MSE_METHODS = ['linearization', 'gross', 'genboot']
LOG_LEVELS = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']


class ConfigValidationError(Exception):
    """Raised when the configuration fails validation."""
    pass


def default_config() -> Dict[str, Any]:
    return {
        'curves': {
            'quadrature': 'trapezoid',
        },
        'population': {
            'input': None,
            'synthetic': {
                'N': 2000,
                'D': 48,
                'n_strata': 5,
                'daily_period': 48,
                'outlier_fraction': 0.02,
                'outlier_scale': 8.0,
                'level_sigma': 0.8,
                'noise_sd': 0.1,
                'baseline': 1.0,
            },
            'seed': 0,
            'jumper_rate': 0.0,
        },
        'design': {
            'kind': 'srs',
            'n': 40,
            'allocation': 'neyman',
            'explicit_allocation': None,
            'seed': 0,
        },
        'tuning': {
            'kind': 'minimax',
            'q': 4.0,
            'scan_points': 1001,
        },
        'spca': {
            'K': 5,
            'tol': 1e-8,
            'max_iter': 500,
            'lenient': False,
            'median_linearization': 'spherical',
        },
        'wavelet': {
            'family': 'symlet10',
            'levels': None,
        },
        'depth': {
            'window': 5,
            'scan_points': 101,
        },
        'mse': {
            'method': 'linearization',
            'reps': 1000,
            'seed': 0,
        },
        'simulation': {
            'scenarios': [
                {'name': 'SRS_n40', 'design': 'srs', 'jumper_rate': 0.0, 'n': 40},
            ],
            'estimators': ['ht', 'r1_minimax', 'r1_q4', 'r1_q10', 'r2', 'r3', 'r4'],
            'replicates': 500,
            'seed': 0,
            'enumerate': False,
            'workers': 1,
            'mse_evaluation': {
                'estimator': None,
                'methods': ['linearization', 'gross', 'genboot'],
                'reps': 200,
            },
        },
        'output': {
            'dir': 'results',
        },
        'logging': {
            'log_level': 'INFO',
            'log_dir': 'logs',
        },
    }


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class ConfigManager:
    """Manages configuration settings for estimation runs and simulations."""

    def __init__(self, config_path: Optional[str] = "config.yaml", create_if_missing: bool = True):
        """
        Initialize configuration manager.

        Args:
            config_path: YAML file to read; None keeps the built-in defaults only
            create_if_missing: write the defaults to `config_path` when it does not exist
        """
        self.config_path = Path(config_path) if config_path else None
        self.create_if_missing = create_if_missing
        self.config = default_config()
        self.loaded = self.load_config() if self.config_path is not None else False

    def load_config(self) -> bool:
        """Load configuration from YAML file, layered over the defaults."""
        try:
            if self.config_path.exists():
                with open(self.config_path, 'r') as file:
                    loaded = yaml.safe_load(file) or {}
                if not isinstance(loaded, dict):
                    logger.error(f"Configuration file {self.config_path} does not hold a mapping")
                    return False
                self.config = _merge(default_config(), loaded)
                logger.info(f"Configuration loaded from {self.config_path}")
                return True
            logger.warning(f"Configuration file {self.config_path} not found")
            if self.create_if_missing:
                return self.create_default_config()
            return False
        except yaml.YAMLError as e:
            logger.error(f"Error parsing configuration {self.config_path}: {e}")
            return False
        except OSError as e:
            logger.error(f"Error loading configuration: {e}")
            return False

    def create_default_config(self) -> bool:
        """Create default configuration file."""
        self.config = default_config()
        try:
            with open(self.config_path, 'w') as file:
                yaml.dump(self.config, file, default_flow_style=False, sort_keys=False)
            logger.info(f"Default configuration created at {self.config_path}")
            return True
        except OSError as e:
            logger.error(f"Error creating default configuration: {e}")
            return False

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by key (supports dot notation)."""
        value = self.config
        for k in key.split('.'):
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return default if value is None and default is not None else value

    def set(self, key: str, value: Any) -> bool:
        """Set configuration value by key (supports dot notation)."""
        keys = key.split('.')
        config = self.config
        for k in keys[:-1]:
            if not isinstance(config.get(k), dict):
                config[k] = {}
            config = config[k]
        config[keys[-1]] = value
        return True

    def as_dict(self) -> Dict[str, Any]:
        """Deep copy of the resolved configuration, for metadata echoes."""
        return copy.deepcopy(self.config)

    def validate_config(self) -> bool:
        """Validate configuration settings, logging every problem found."""
        errors = self.get_validation_errors()
        if errors:
            for error in errors:
                logger.error(f"Configuration validation error: {error}")
            return False
        logger.info("Configuration validation passed successfully")
        return True

    def _validate_curves_settings(self) -> List[str]:
        errors = []
        quadrature = self.get('curves.quadrature', 'trapezoid')
        if quadrature not in QUADRATURE_MODES:
            errors.append(f"curves.quadrature must be one of: {QUADRATURE_MODES}")
        return errors

    def _validate_population_settings(self) -> List[str]:
        """Validate population source and synthetic generator settings."""
        errors = []

        source = self.get('population.input')
        if source is not None and (not isinstance(source, str) or not source.strip()):
            errors.append("population.input must be a file path or null")

        synthetic = self.get('population.synthetic', {})
        if not isinstance(synthetic, dict):
            return errors + ["population.synthetic must be a mapping"]
        for key in ('N', 'D', 'n_strata', 'daily_period'):
            value = synthetic.get(key)
            if not _is_int(value) or value < 1:
                errors.append(f"population.synthetic.{key} must be a positive integer")
        fraction = synthetic.get('outlier_fraction')
        if not _is_number(fraction) or not 0.0 <= fraction <= 1.0:
            errors.append("population.synthetic.outlier_fraction must be a number in [0, 1]")
        for key in ('outlier_scale', 'baseline'):
            value = synthetic.get(key)
            if not _is_number(value) or value <= 0:
                errors.append(f"population.synthetic.{key} must be a positive number")
        for key in ('level_sigma', 'noise_sd'):
            value = synthetic.get(key)
            if not _is_number(value) or value < 0:
                errors.append(f"population.synthetic.{key} must be a non-negative number")

        if not _is_int(self.get('population.seed', 0)):
            errors.append("population.seed must be an integer")
        rate = self.get('population.jumper_rate', 0.0)
        if not _is_number(rate) or not 0.0 <= rate <= 1.0:
            errors.append("population.jumper_rate must be a number in [0, 1]")
        return errors

    def _validate_design_settings(self) -> List[str]:
        errors = []
        if self.get('design.kind') not in DESIGN_KINDS:
            errors.append(f"design.kind must be one of: {DESIGN_KINDS}")
        n = self.get('design.n')
        if not _is_int(n) or n < 1:
            errors.append("design.n must be a positive integer")
        allocation = self.get('design.allocation', 'neyman')
        if allocation not in ALLOCATIONS:
            errors.append(f"design.allocation must be one of: {ALLOCATIONS}")
        explicit = self.get('design.explicit_allocation')
        if allocation == 'explicit' and explicit is None:
            errors.append("design.explicit_allocation is required when design.allocation is explicit")
        if explicit is not None and not isinstance(explicit, (str, dict)):
            errors.append("design.explicit_allocation must be a mapping {stratum: n_h} or 'h:n_h,...'")
        if not _is_int(self.get('design.seed', 0)):
            errors.append("design.seed must be an integer")
        return errors

    def _validate_estimator_settings(self) -> List[str]:
        """Validate tuning, spherical PCA, wavelet and depth settings."""
        errors = []

        if self.get('tuning.kind') not in TUNING_KINDS:
            errors.append(f"tuning.kind must be one of: {TUNING_KINDS}")
        q = self.get('tuning.q', 4.0)
        if not _is_number(q) or q <= 1:
            errors.append("tuning.q must be a number greater than 1")
        scan = self.get('tuning.scan_points', 1001)
        if not _is_int(scan) or scan < 3:
            errors.append("tuning.scan_points must be an integer >= 3")

        K = self.get('spca.K', 5)
        if not _is_int(K) or K < 1:
            errors.append("spca.K must be a positive integer")
        tol = self.get('spca.tol', 1e-8)
        if not _is_number(tol) or tol <= 0:
            errors.append("spca.tol must be a positive number")
        max_iter = self.get('spca.max_iter', 500)
        if not _is_int(max_iter) or max_iter < 1:
            errors.append("spca.max_iter must be a positive integer")
        if not isinstance(self.get('spca.lenient', False), bool):
            errors.append("spca.lenient must be a boolean (true/false)")
        if self.get('spca.median_linearization', 'spherical') not in MEDIAN_LINEARIZATIONS:
            errors.append(f"spca.median_linearization must be one of: {MEDIAN_LINEARIZATIONS}")

        if self.get('wavelet.family', 'symlet10') not in WAVELET_FAMILIES:
            errors.append(f"wavelet.family must be one of: {WAVELET_FAMILIES}")
        levels = self.get('wavelet.levels')
        if levels is not None and (not _is_int(levels) or levels < 0):
            errors.append("wavelet.levels must be a non-negative integer or null")

        window = self.get('depth.window', 5)
        if not _is_int(window) or window < 1 or window % 2 == 0:
            errors.append("depth.window must be a positive odd integer")
        alpha_scan = self.get('depth.scan_points', 101)
        if not _is_int(alpha_scan) or alpha_scan < 3:
            errors.append("depth.scan_points must be an integer >= 3")
        return errors

    def _validate_mse_settings(self) -> List[str]:
        errors = []
        if self.get('mse.method') not in MSE_METHODS:
            errors.append(f"mse.method must be one of: {MSE_METHODS}")
        reps = self.get('mse.reps', 1000)
        if not _is_int(reps) or reps < 2:
            errors.append("mse.reps must be an integer >= 2")
        if not _is_int(self.get('mse.seed', 0)):
            errors.append("mse.seed must be an integer")
        return errors

    def _validate_simulation_settings(self) -> List[str]:
        """Validate the scenario grid and Monte Carlo settings."""
        errors = []

        scenarios = self.get('simulation.scenarios', [])
        if not isinstance(scenarios, list) or not scenarios:
            errors.append("simulation.scenarios must be a non-empty list")
        else:
            for k, scenario in enumerate(scenarios):
                errors.extend(self._validate_scenario(k, scenario))

        estimators = self.get('simulation.estimators', [])
        if not isinstance(estimators, list) or not all(isinstance(e, str) for e in estimators):
            errors.append("simulation.estimators must be a list of estimator names")

        enumerate_all = self.get('simulation.enumerate', False)
        if not isinstance(enumerate_all, bool):
            errors.append("simulation.enumerate must be a boolean (true/false)")
        replicates = self.get('simulation.replicates', 500)
        if not _is_int(replicates) or (replicates < 2 and not enumerate_all):
            errors.append("simulation.replicates must be an integer >= 2")
        if not _is_int(self.get('simulation.seed', 0)):
            errors.append("simulation.seed must be an integer")
        workers = self.get('simulation.workers', 1)
        if not _is_int(workers) or workers < 1:
            errors.append("simulation.workers must be a positive integer")

        methods = self.get('simulation.mse_evaluation.methods', [])
        if not isinstance(methods, list) or any(m not in MSE_METHODS for m in methods):
            errors.append(f"simulation.mse_evaluation.methods must be a list drawn from: {MSE_METHODS}")
        mse_reps = self.get('simulation.mse_evaluation.reps', 200)
        if not _is_int(mse_reps) or mse_reps < 2:
            errors.append("simulation.mse_evaluation.reps must be an integer >= 2")
        return errors

    def _validate_scenario(self, index: int, scenario: Any) -> List[str]:
        prefix = f"simulation.scenarios[{index}]"
        if not isinstance(scenario, dict):
            return [f"{prefix} must be a mapping with design and n"]
        errors = []
        if scenario.get('design') not in DESIGN_KINDS:
            errors.append(f"{prefix}.design must be one of: {DESIGN_KINDS}")
        n = scenario.get('n')
        if not _is_int(n) or n < 1:
            errors.append(f"{prefix}.n must be a positive integer")
        rate = scenario.get('jumper_rate', 0.0)
        if not _is_number(rate) or not 0.0 <= rate <= 1.0:
            errors.append(f"{prefix}.jumper_rate must be a number in [0, 1]")
        elif rate > 0 and scenario.get('design') == 'srs':
            errors.append(f"{prefix}.jumper_rate needs a stratified design")
        return errors

    def _validate_output_settings(self) -> List[str]:
        output_dir = self.get('output.dir', 'results')
        if not isinstance(output_dir, str) or not output_dir.strip():
            return ["output.dir must be a non-empty string"]
        return []

    def _validate_logging_settings(self) -> List[str]:
        """Validate logging configuration settings."""
        errors = []
        log_level = self.get('logging.log_level', 'INFO')
        if not isinstance(log_level, str) or log_level.upper() not in LOG_LEVELS:
            errors.append(f"logging.log_level must be one of: {LOG_LEVELS}")
        log_dir = self.get('logging.log_dir', 'logs')
        if not isinstance(log_dir, str) or not log_dir.strip():
            errors.append("logging.log_dir must be a non-empty string")
        return errors

    def get_validation_errors(self) -> List[str]:
        """Get a list of all configuration validation errors."""
        errors = []
        errors.extend(self._validate_curves_settings())
        errors.extend(self._validate_population_settings())
        errors.extend(self._validate_design_settings())
        errors.extend(self._validate_estimator_settings())
        errors.extend(self._validate_mse_settings())
        errors.extend(self._validate_simulation_settings())
        errors.extend(self._validate_output_settings())
        errors.extend(self._validate_logging_settings())
        return errors

    def raise_if_invalid(self) -> None:
        errors = self.get_validation_errors()
        if errors:
            raise ConfigValidationError("; ".join(errors))

    def print_validation_report(self) -> None:
        """Print a detailed validation report."""
        errors = self.get_validation_errors()

        if not errors:
            print("Configuration validation passed successfully!")
            return

        print("Configuration validation failed with the following errors:")
        print()
        for i, error in enumerate(errors, 1):
            print(f"  {i}. {error}")
        print()
        name = self.config_path.name if self.config_path else "configuration"
        print(f"Please fix these errors in your {name} file.")

    def save_config(self) -> bool:
        """Save current configuration to file."""
        if self.config_path is None:
            logger.error("No configuration path set; nothing saved")
            return False
        try:
            with open(self.config_path, 'w') as file:
                yaml.dump(self.config, file, default_flow_style=False, sort_keys=False)
            logger.info(f"Configuration saved to {self.config_path}")
            return True
        except OSError as e:
            logger.error(f"Error saving configuration: {e}")
            return False
