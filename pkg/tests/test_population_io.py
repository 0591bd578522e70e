"""Tests for population loading, writing, generation and strata jumpers."""

import os
import shutil
import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from src.curves import CurvePopulation, TimeGrid
from src.exceptions import FormatError, MissingData, NotEnoughStrata, ParseError, SpecError
from src.population_io import (JumperSpec, SyntheticSpec, apply_strata_jumpers, generate_population,
                               load_population, quantile_strata, write_population)


class TestLoadPopulation:
    """Test cases for load_population."""

    def setup_method(self):
        self.temp_dir = tempfile.mkdtemp()

    def teardown_method(self):
        if self.temp_dir and os.path.exists(self.temp_dir):
            shutil.rmtree(self.temp_dir)

    def _write(self, text: str) -> Path:
        path = Path(self.temp_dir) / "pop.csv"
        path.write_text(text)
        return path

    def test_numeric_grid(self):
        path = self._write("t_1,t_2,t_3,t_4\n1,2,3,4\n5,6,7,8\n9,10,11,12\n")
        pop = load_population(path)
        assert pop.N == 3
        assert pop.D == 4
        assert pop.stratum is None
        np.testing.assert_array_equal(pop.values[1], [5, 6, 7, 8])

    def test_blank_cell(self):
        path = self._write("t_1,t_2,t_3\n1,2,3\n4,,6\n")
        with pytest.raises(MissingData):
            load_population(path)

    def test_non_numeric_cell(self):
        path = self._write("t_1,t_2,t_3\n1,2,3\n4,five,6\n")
        with pytest.raises(ParseError):
            load_population(path)

    def test_ragged_row(self):
        path = self._write("t_1,t_2,t_3\n1,2,3\n4,5\n")
        with pytest.raises(FormatError):
            load_population(path)

    def test_stratum_column(self):
        path = self._write("t_1,t_2,stratum\n1,2,1\n3,4,1\n5,6,2\n")
        pop = load_population(path)
        assert pop.D == 2
        assert pop.H == 2
        assert pop.stratum_sizes() == {1: 2, 2: 1}

    def test_bad_stratum_label(self):
        path = self._write("t_1,t_2,stratum\n1,2,1.5\n3,4,1\n")
        with pytest.raises(ParseError):
            load_population(path)

    def test_missing_file(self):
        with pytest.raises(FormatError):
            load_population(Path(self.temp_dir) / "absent.csv")

    def test_unsupported_format(self):
        path = self._write("t_1,t_2\n1,2\n")
        with pytest.raises(FormatError):
            load_population(path, format="parquet")

    def test_quadrature_mode(self):
        path = self._write("t_1,t_2,t_3\n1,2,3\n")
        pop = load_population(path, quadrature="unit")
        np.testing.assert_array_equal(pop.grid.quad_weights, np.ones(3))

    def test_round_trip_is_exact(self):
        pop = generate_population(SyntheticSpec(N=50, D=12, n_strata=3, seed=4))
        path = write_population(pop, Path(self.temp_dir) / "out" / "pop.csv")
        loaded = load_population(path)
        assert loaded.same_as(pop)

    def test_write_permission_error(self):
        pop = CurvePopulation(np.ones((2, 3)), TimeGrid.uniform(3))
        with patch("src.result_writer.tempfile.mkstemp", side_effect=PermissionError("denied")):
            with pytest.raises(PermissionError):
                write_population(pop, Path(self.temp_dir) / "pop.csv")

    def test_failed_write_leaves_no_temp_file(self):
        """A failing CSV write keeps the old file and removes the temporary one."""
        target = Path(self.temp_dir) / "pop.csv"
        target.write_text("t_1\n1\n")
        pop = CurvePopulation(np.ones((2, 3)), TimeGrid.uniform(3))
        with patch("pandas.DataFrame.to_csv", side_effect=OSError("disk full")):
            with pytest.raises(OSError):
                write_population(pop, target)
        assert sorted(p.name for p in Path(self.temp_dir).iterdir()) == ["pop.csv"]
        assert target.read_text() == "t_1\n1\n"


class TestGeneratePopulation:
    """Test cases for the synthetic generator."""

    def test_deterministic(self):
        spec = SyntheticSpec(N=100, D=16, seed=11)
        assert generate_population(spec).same_as(generate_population(spec))

    def test_shape_and_strata(self):
        pop = generate_population(SyntheticSpec(N=100, D=16, n_strata=5, seed=1))
        assert (pop.N, pop.D) == (100, 16)
        assert pop.stratum_sizes() == {h: 20 for h in range(1, 6)}
        assert np.all(pop.values >= 0)

    def test_outliers_scale_levels(self):
        base = generate_population(SyntheticSpec(N=200, D=16, outlier_fraction=0.0, seed=2))
        contaminated = generate_population(SyntheticSpec(N=200, D=16, outlier_fraction=0.05, seed=2))
        assert contaminated.values.sum() > base.values.sum()
        changed = np.any(contaminated.values != base.values, axis=1)
        assert changed.sum() == 10

    def test_unit_scale_is_a_no_op(self):
        base = generate_population(SyntheticSpec(N=100, D=16, outlier_fraction=0.0, seed=5))
        scaled = generate_population(SyntheticSpec(N=100, D=16, outlier_fraction=0.1, outlier_scale=1.0, seed=5))
        np.testing.assert_array_equal(base.values, scaled.values)

    def test_skewness_bounded_without_outliers(self):
        spec = SyntheticSpec(N=500, D=16, outlier_fraction=0.0, level_sigma=0.5, seed=9)
        totals = generate_population(spec).values.sum(axis=1)
        assert totals.max() / np.median(totals) < np.exp(6 * spec.level_sigma)

    @pytest.mark.parametrize("kwargs", [{"N": 5}, {"D": 4}, {"outlier_fraction": 0.5}, {"outlier_scale": 0.5}])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(SpecError):
            generate_population(SyntheticSpec(**kwargs))

    def test_quantile_strata(self):
        labels = quantile_strata(np.array([5.0, 1.0, 3.0, 2.0, 4.0, 6.0]), 3)
        np.testing.assert_array_equal(labels, [3, 1, 2, 1, 2, 3])


class TestStrataJumpers:
    """Test cases for apply_strata_jumpers."""

    def setup_method(self):
        grid = TimeGrid.uniform(4)
        self.pop = CurvePopulation(np.arange(400, dtype=float).reshape(100, 4), grid,
                                   stratum=np.repeat([1, 2, 3, 4], 25))

    def test_zero_rate(self):
        moved = apply_strata_jumpers(self.pop, JumperSpec(rate=0.0, seed=1))
        assert moved.same_as(self.pop)

    def test_exact_count(self):
        moved = apply_strata_jumpers(self.pop, JumperSpec(rate=0.1, seed=1))
        assert np.count_nonzero(moved.stratum != self.pop.stratum) == 10
        assert sum(moved.stratum_sizes().values()) == self.pop.N
        np.testing.assert_array_equal(moved.values, self.pop.values)

    def test_full_rate_two_strata(self):
        pop = CurvePopulation(np.ones((6, 4)), TimeGrid.uniform(4), stratum=np.array([1, 1, 1, 2, 2, 2]))
        moved = apply_strata_jumpers(pop, JumperSpec(rate=1.0, seed=3))
        np.testing.assert_array_equal(moved.stratum, [2, 2, 2, 1, 1, 1])

    def test_single_stratum(self):
        pop = CurvePopulation(np.ones((6, 4)), TimeGrid.uniform(4), stratum=np.ones(6, dtype=int))
        with pytest.raises(NotEnoughStrata):
            apply_strata_jumpers(pop, JumperSpec(rate=0.5))

    def test_unstratified(self):
        pop = CurvePopulation(np.ones((6, 4)), TimeGrid.uniform(4))
        with pytest.raises(NotEnoughStrata):
            apply_strata_jumpers(pop, JumperSpec(rate=0.5))

    def test_invalid_rate(self):
        with pytest.raises(SpecError):
            apply_strata_jumpers(self.pop, JumperSpec(rate=1.5))
