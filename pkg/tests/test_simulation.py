"""Tests for the Monte Carlo harness."""

import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.curves import CurvePopulation, TimeGrid
from src.exceptions import RelativeBiasUndefined, SpecError, TooFewReplicates
from src.population_io import SyntheticSpec, generate_population
from src.simulation import (SERIES_COLUMNS, SUMMARY_COLUMNS, EvalTable, RuntimeStats, Scenario,
                            describe_scenario, emit_tables, evaluate_mse_estimators, relative_bias,
                            relative_mse, run_monte_carlo, run_scenarios)


def _population(N=60, D=8, seed=0, strata=3):
    values = np.random.default_rng(seed).gamma(2.0, 3.0, size=(N, D))
    stratum = np.repeat(np.arange(1, strata + 1), N // strata)
    return CurvePopulation(values, TimeGrid.uniform(D), stratum=stratum, auxiliary=values.sum(axis=1))


class TestScenario:
    """Scenario labels and validation."""

    def test_from_label(self):
        scenario = Scenario.from_label("STR-J10", 40)
        assert scenario.name == "STR-J10_n40"
        assert scenario.design == "str"
        assert scenario.jumper_rate == pytest.approx(0.1)
        assert Scenario.from_label("srs", 20).name == "SRS_n20"

    def test_bad_labels(self):
        with pytest.raises(SpecError):
            Scenario.from_label("PPS", 10)
        with pytest.raises(SpecError):
            Scenario.from_label("SRS-J10", 10)

    def test_validate(self):
        with pytest.raises(TooFewReplicates):
            Scenario("s", "srs", 5, replicates=1).validate()
        Scenario("s", "srs", 5, replicates=1, enumerate=True).validate()
        with pytest.raises(SpecError):
            Scenario("s", "srs", 5, jumper_rate=0.1).validate()
        with pytest.raises(SpecError):
            Scenario("s", "pps", 5).validate()

    def test_describe(self):
        info = describe_scenario(Scenario("s", "srs", 3, enumerate=True), _population(N=6, strata=2))
        assert info["replicates"] == 20
        assert info["allocation"] is None


class TestRelativeMeasures:
    """Relative bias and relative MSE."""

    def test_relative_bias(self):
        rb, undefined = relative_bias(np.array([1.0, 2.0]), np.array([10.0, 0.0]))
        np.testing.assert_allclose(rb, [10.0, 2.0])
        np.testing.assert_array_equal(undefined, [False, True])

    def test_relative_bias_strict(self):
        with pytest.raises(RelativeBiasUndefined):
            relative_bias(np.array([1.0]), np.array([0.0]), strict=True)

    def test_relative_mse(self):
        out = relative_mse(np.array([2.0, 3.0]), np.array([4.0, 0.0]))
        assert out[0] == 50.0
        assert np.isnan(out[1])

    def test_runtime_stats(self):
        stats = RuntimeStats()
        assert np.isnan(stats.mean_seconds)
        stats.add(0.5)
        stats.add(1.5)
        assert stats.mean_seconds == 1.0
        assert (stats.min_seconds, stats.max_seconds) == (0.5, 1.5)


class TestMonteCarlo:
    """Repeated-sampling evaluation."""

    def setup_method(self):
        self.pop = _population()

    def test_ht_reference_is_one_hundred(self):
        scenario = Scenario("srs", "srs", 10, estimators=("ht", "r1_minimax"), replicates=50, seed=1)
        table = run_monte_carlo(self.pop, scenario)
        np.testing.assert_allclose(table.entry("srs", "ht").rmse, 100.0)
        assert table.entry("srs", "r1_minimax").replicates == 50

    def test_ht_computed_but_not_reported(self):
        scenario = Scenario("srs", "srs", 10, estimators=("r1_minimax",), replicates=20)
        table = run_monte_carlo(self.pop, scenario)
        assert [e.estimator for e in table.entries] == ["r1_minimax"]
        assert np.all(np.isfinite(table.entries[0].rmse))
        with pytest.raises(KeyError):
            table.entry("srs", "ht")

    def test_census(self):
        scenario = Scenario("census", "srs", 60, estimators=("ht",), replicates=3)
        entry = run_monte_carlo(self.pop, scenario).entry("census", "ht")
        np.testing.assert_allclose(entry.bias, 0.0, atol=1e-9)
        np.testing.assert_allclose(entry.mse, 0.0, atol=1e-12)

    def test_enumeration_is_unbiased(self):
        pop = _population(N=6, strata=2, seed=2)
        scenario = Scenario("enum", "srs", 3, estimators=("ht",), enumerate=True)
        entry = run_monte_carlo(pop, scenario).entry("enum", "ht")
        assert entry.replicates == 20
        np.testing.assert_allclose(entry.bias, 0.0, atol=1e-10)

    def test_stratified_enumeration(self):
        pop = _population(N=8, strata=2, seed=3)
        scenario = Scenario("enum", "str", 4, estimators=("ht",), enumerate=True, allocation="proportional")
        entry = run_monte_carlo(pop, scenario).entry("enum", "ht")
        assert entry.replicates == 36
        np.testing.assert_allclose(entry.bias, 0.0, atol=1e-10)

    def test_seeded_and_thread_invariant(self):
        base = Scenario("s", "srs", 10, estimators=("ht", "r1_q4", "r4"), replicates=30, seed=5)
        threaded = Scenario("s", "srs", 10, estimators=("ht", "r1_q4", "r4"), replicates=30, seed=5, workers=3)
        a = run_monte_carlo(self.pop, base)
        b = run_monte_carlo(self.pop, base)
        c = run_monte_carlo(self.pop, threaded)
        for name in ("ht", "r1_q4", "r4"):
            np.testing.assert_array_equal(a.entry("s", name).mse, b.entry("s", name).mse)
            np.testing.assert_array_equal(a.entry("s", name).mse, c.entry("s", name).mse)

    def test_jumpers_and_scenarios(self):
        scenarios = [
            Scenario("STR-J0", "str", 12, estimators=("ht", "r1_minimax"), replicates=20),
            Scenario("STR-J20", "str", 12, jumper_rate=0.2, estimators=("ht", "r1_minimax"), replicates=20),
        ]
        table = run_scenarios(self.pop, scenarios)
        frame = table.summary_frame()
        assert list(frame.columns) == SUMMARY_COLUMNS
        assert len(frame) == 4
        assert set(frame["scenario"]) == {"STR-J0", "STR-J20"}
        series = table.series_frame()
        assert list(series.columns) == SERIES_COLUMNS
        assert len(series) == 4 * self.pop.D

    def test_zero_total_is_flagged(self):
        values = np.random.default_rng(4).gamma(2.0, size=(30, 6))
        values[:, 2] = 0.0
        pop = CurvePopulation(values, TimeGrid.uniform(6))
        scenario = Scenario("z", "srs", 8, estimators=("ht",), replicates=10)
        entry = run_monte_carlo(pop, scenario).entry("z", "ht")
        np.testing.assert_array_equal(np.flatnonzero(entry.rb_undefined), [2])
        with pytest.raises(RelativeBiasUndefined):
            run_monte_carlo(pop, scenario, strict_rb=True)


class TestEmitTables:
    """Writing summary and series tables."""

    def setup_method(self):
        self.temp_dir = tempfile.mkdtemp()

    def teardown_method(self):
        if self.temp_dir and os.path.exists(self.temp_dir):
            shutil.rmtree(self.temp_dir)

    def test_empty_table_has_header(self):
        paths = emit_tables(EvalTable(points=np.arange(4.0)), self.temp_dir)
        assert [p.name for p in paths] == ["simulation_summary.csv", "simulation_summary.json",
                                           "simulation_series.csv"]
        frame = pd.read_csv(paths[0])
        assert list(frame.columns) == SUMMARY_COLUMNS
        assert len(frame) == 0

    def test_two_rows(self):
        scenario = Scenario("s", "srs", 10, estimators=("ht", "r1_minimax"), replicates=10, seed=2)
        table = run_monte_carlo(_population(), scenario)
        paths = emit_tables(table, self.temp_dir, prefix="run", metadata={"population": "synthetic"})
        frame = pd.read_csv(paths[0])
        assert len(frame) == 2
        assert frame.loc[frame["estimator"] == "ht", "rmse_mean"].iloc[0] == pytest.approx(100.0)
        payload = json.loads(Path(paths[1]).read_text())
        assert len(payload["rows"]) == 2
        assert payload["metadata"]["seeds"] == {"s": 2}
        sidecar = json.loads(Path(str(paths[0]) + ".json").read_text())
        assert sidecar["population"] == "synthetic"
        assert len(pd.read_csv(paths[2])) == 2 * 8


class TestMseEvaluation:
    """Relative bias of the MSE estimators."""

    def test_small_run(self):
        scenario = Scenario("s", "srs", 10, replicates=4, seed=3)
        frame = evaluate_mse_estimators(_population(), scenario, "r1_minimax", reps=5)
        assert list(frame["mse_method"]) == ["linearization", "gross", "genboot"]
        assert (frame["bootstrap_reps"] == [0, 5, 5]).all()
        assert frame["estimated_mse_mean"].gt(0).all()

    def test_rejects_enumeration_and_unknown_methods(self):
        pop = _population(N=6, strata=2)
        with pytest.raises(SpecError):
            evaluate_mse_estimators(pop, Scenario("s", "srs", 3, enumerate=True), "ht")
        with pytest.raises(SpecError):
            evaluate_mse_estimators(pop, Scenario("s", "srs", 3), "ht", methods=["jackknife"])


@pytest.mark.slow
class TestSkewedPopulation:
    """Qualitative behaviour on the synthetic skewed population."""

    def setup_method(self):
        self.pop = generate_population(SyntheticSpec(N=2000, D=48, outlier_fraction=0.02, outlier_scale=8.0,
                                                     seed=2024))

    def test_robust_estimators_beat_ht(self):
        scenario = Scenario.from_label("SRS", 40, replicates=500, seed=11)
        table = run_monte_carlo(self.pop, scenario)
        for entry in table.entries:
            if entry.estimator == "ht":
                continue
            assert entry.rmse_mean < 100.0, entry.estimator
            assert entry.rb_mean < 0.0, entry.estimator

    def test_jumpers_increase_robust_gain(self):
        gains = {}
        for label in ("STR-J0", "STR-J10"):
            scenario = Scenario.from_label(label, 40, replicates=300, seed=12)
            table = run_monte_carlo(self.pop, scenario)
            best = min(e.rmse_mean for e in table.entries if e.estimator != "ht")
            gains[label] = 100.0 - best
        assert gains["STR-J10"] > gains["STR-J0"]

    def test_linearization_underestimates_mse(self):
        scenario = Scenario.from_label("SRS", 100, replicates=300, seed=13)
        frame = evaluate_mse_estimators(self.pop, scenario, "r1_minimax", methods=["linearization", "gross"],
                                        reps=100)
        rb = dict(zip(frame["mse_method"], frame["rb_mean"]))
        assert rb["linearization"] < 0.0
        assert abs(rb["gross"]) < abs(rb["linearization"])
