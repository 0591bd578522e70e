"""Tests for the command line entry point."""

import json

import pandas as pd
import pytest
import yaml

from src.main import EXIT_DATA_ERROR, EXIT_OK, EXIT_USAGE, load_config, main, parse_args, scenarios_from_config

SYNTHETIC = ['--synthetic', '--n-pop', '60', '--d', '16', '--n-strata', '3', '--population-seed', '4']


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    """Run every command inside a scratch directory so logs and results stay there."""
    monkeypatch.chdir(tmp_path)
    return tmp_path


class TestParseArgs:
    """Flag consistency checks."""

    @pytest.mark.parametrize("argv", [
        ['estimate', 'r1', '--k', '3'],
        ['estimate', 'r2', '--wavelet', 'haar'],
        ['estimate', 'r3', '--window', '5'],
        ['mse', 'r1_minimax', '--levels', '2'],
        ['estimate', 'r1', '--tuning', 'minimax', '--q', '4'],
        ['estimate', 'r1', '--input', 'pop.csv', '--synthetic'],
        ['estimate', 'r7'],
        [],
    ])
    def test_usage_errors(self, argv, workdir):
        assert main(argv) == EXIT_USAGE

    def test_consistent_flags(self):
        args = parse_args(['mse', 'r2_q4', '--k', '3', '--method', 'gross', '--reps', '50'])
        assert args.estimator == 'r2_q4'
        assert args.k == 3

    def test_version(self, capsys):
        assert main(['--version']) == EXIT_OK
        assert '1.0.0' in capsys.readouterr().out


class TestLoadConfig:
    """Command line overrides layered on the configuration."""

    def test_overrides(self):
        args = parse_args(['estimate', 'r1', '--synthetic', '--n', '25', '--q', '10', '--seed', '3',
                           '--allocation', '1:5,2:5', '--threads', '2', '-v'])
        config = load_config(args)
        assert config.get('design.n') == 25
        assert config.get('tuning.kind') == 'qpow'
        assert config.get('tuning.q') == 10.0
        assert config.get('design.seed') == 3
        assert config.get('design.allocation') == 'explicit'
        assert config.get('design.explicit_allocation') == '1:5,2:5'
        assert config.get('simulation.workers') == 2
        assert config.get('logging.log_level') == 'DEBUG'

    def test_seed_and_reps_targets(self):
        assert load_config(parse_args(['generate', '--seed', '9'])).get('population.seed') == 9
        simulate = load_config(parse_args(['simulate', '--seed', '9', '--reps', '20']))
        assert simulate.get('simulation.seed') == 9
        assert simulate.get('simulation.replicates') == 20
        assert load_config(parse_args(['mse', 'r1', '--reps', '20'])).get('mse.reps') == 20

    def test_mse_seeds_are_separate(self):
        """--seed draws the sample, --boot-seed drives the bootstrap replicates."""
        config = load_config(parse_args(['mse', 'r1', '--boot-seed', '5', '--seed', '2']))
        assert config.get('mse.seed') == 5
        assert config.get('design.seed') == 2
        assert load_config(parse_args(['mse', 'r1', '--seed', '2'])).get('mse.seed') == 0

    def test_scenarios_from_config(self):
        config = load_config(parse_args(['simulate', '--reps', '7']))
        config.set('simulation.scenarios', [{'design': 'str', 'n': 30, 'jumper_rate': 0.1}])
        scenario, = scenarios_from_config(config)
        assert scenario.name == 'STR_n30'
        assert scenario.replicates == 7
        assert scenario.jumper_rate == pytest.approx(0.1)


@pytest.mark.integration
class TestCommands:
    """End-to-end runs of each subcommand on a small synthetic population."""

    def test_generate_then_estimate_from_file(self, workdir):
        assert main(['generate', *SYNTHETIC, '-o', 'out', '--out', 'pop.csv']) == EXIT_OK
        population = pd.read_csv(workdir / 'out' / 'pop.csv')
        assert len(population) == 60
        assert 'stratum' in population.columns
        meta = json.loads((workdir / 'out' / 'pop.csv.json').read_text())
        assert meta['N'] == 60 and meta['D'] == 16

        code = main(['estimate', 'r1', '--input', 'out/pop.csv', '--design', 'str', '--n', '12',
                     '--seed', '1', '-o', 'est'])
        assert code == EXIT_OK
        frame = pd.read_csv(workdir / 'est' / 'estimate_r1.csv')
        assert list(frame.columns) == ['t', 'total', 'ht']
        assert len(frame) == 16

    @pytest.mark.parametrize("estimator,extra", [
        ('ht', []),
        ('r2', ['--k', '2']),
        ('r3', ['--wavelet', 'haar']),
        ('r4', ['--window', '3']),
    ])
    def test_estimate(self, estimator, extra, workdir):
        code = main(['estimate', estimator, *SYNTHETIC, '--n', '15', '--seed', '2', '-o', 'res', *extra])
        assert code == EXIT_OK
        sidecar = json.loads((workdir / 'res' / f'estimate_{estimator}.csv.json').read_text())
        assert sidecar['sample_seed'] == 2
        assert sidecar['estimator']['kind'] == estimator

    def test_mse(self, workdir):
        code = main(['mse', 'r1_q4', *SYNTHETIC, '--n', '15', '--method', 'gross', '--reps', '10',
                     '-o', 'res'])
        assert code == EXIT_OK
        frame = pd.read_csv(workdir / 'res' / 'mse_r1_q4_gross.csv')
        assert list(frame.columns) == ['t', 'estimate', 'mse', 'v_estimate', 'v_difference', 'bias_squared']
        assert (frame['mse'] >= 0).all()

    def test_simulate(self, workdir):
        config = {
            'population': {'synthetic': {'N': 60, 'D': 16, 'n_strata': 3}},
            'simulation': {
                'scenarios': [{'design': 'srs', 'n': 12}, {'design': 'str', 'n': 12, 'jumper_rate': 0.1}],
                'estimators': ['ht', 'r1_minimax'],
                'replicates': 5,
                'mse_evaluation': {'estimator': 'r1_minimax', 'methods': ['linearization'], 'reps': 2},
            },
            'output': {'dir': 'sim'},
        }
        (workdir / 'run.yaml').write_text(yaml.dump(config))
        assert main(['simulate', '--config', 'run.yaml']) == EXIT_OK
        summary = pd.read_csv(workdir / 'sim' / 'simulation_summary.csv')
        assert len(summary) == 4
        assert (workdir / 'sim' / 'simulation_series.csv').exists()
        assert len(pd.read_csv(workdir / 'sim' / 'simulation_mse.csv')) == 2


class TestFailures:
    """Data and configuration failures exit with status 1."""

    def test_missing_config(self, workdir, capsys):
        assert main(['simulate', '--config', 'absent.yaml']) == EXIT_DATA_ERROR
        assert 'absent.yaml' in capsys.readouterr().err
        assert not (workdir / 'absent.yaml').exists()

    def test_invalid_override(self, workdir, capsys):
        assert main(['mse', 'r1', *SYNTHETIC, '--reps', '1']) == EXIT_DATA_ERROR
        assert 'mse.reps' in capsys.readouterr().err

    def test_missing_population_file(self, workdir, capsys):
        assert main(['estimate', 'r1', '--input', 'nowhere.csv', '-o', 'res']) == EXIT_DATA_ERROR
        assert 'FormatError' in capsys.readouterr().err

    def test_jumpers_need_strata(self, workdir):
        code = main(['estimate', 'r1', '--synthetic', '--n-pop', '60', '--d', '16', '--n-strata', '1',
                     '--jumper-rate', '0.1', '-o', 'res'])
        assert code == EXIT_DATA_ERROR
