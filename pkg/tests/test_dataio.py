import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scorelab.dataio import (
    Column,
    DataError,
    Dataset,
    load_csv,
    save_csv,
    subsample,
    time_partition,
)


def _write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _random_dataset(rng, n_rows=1000):
    income = rng.lognormal(8.0, 1.2, n_rows)
    income[rng.random(n_rows) < 0.07] = np.nan
    segment = np.array(
        [None if rng.random() < 0.05 else f"s{rng.integers(1, 5)}" for _ in range(n_rows)],
        dtype=object,
    )
    return Dataset(
        [
            Column("id", "id", np.arange(n_rows)),
            Column("period", "period", 200501 + rng.integers(0, 12, n_rows)),
            Column("income", "numeric", income),
            Column("ratio", "numeric", rng.standard_normal(n_rows) * 1e-7),
            Column("segment", "categorical", segment),
            Column("score", "latent", rng.standard_normal(n_rows)),
            Column("target", "target", rng.integers(0, 2, n_rows)),
        ]
    )


class TestLoadCsv:
    def test_three_row_file(self, tmp_path):
        p = _write(tmp_path, "period,target,x\n200501,0,1.5\n200502,1,2.0\n200503,0,\n")
        ds = load_csv(p)
        assert ds.n_rows == 3
        assert ds.n_cols == 3
        assert ds.kind("x") == "numeric"
        assert ds.kind("period") == "period"
        assert ds.kind("target") == "target"
        npt.assert_array_equal(ds.column("target").values, [0, 1, 0])
        npt.assert_array_equal(ds.column("x").values[:2], [1.5, 2.0])
        assert np.isnan(ds.column("x").values[2])

    def test_target_value_two_is_an_error_naming_the_row(self, tmp_path):
        p = _write(tmp_path, "period,target\n200501,0\n200502,2\n")
        with pytest.raises(DataError, match="row 2"):
            load_csv(p)

    def test_ragged_row_is_an_error(self, tmp_path):
        p = _write(tmp_path, "period,target,x\n200501,0,1.0\n200502,1\n")
        with pytest.raises(DataError, match="row 2"):
            load_csv(p)

    def test_missing_period_column_is_an_error(self, tmp_path):
        p = _write(tmp_path, "target,x\n0,1.0\n")
        with pytest.raises(DataError, match="period"):
            load_csv(p)

    def test_inference_text_column_is_categorical(self, tmp_path):
        p = _write(tmp_path, "period,target,seg\n200501,0,a\n200502,1,b\n")
        ds = load_csv(p)
        assert ds.kind("seg") == "categorical"
        npt.assert_array_equal(ds.column("seg").values, ["a", "b"])

    def test_schema_sidecar_overrides_inference(self, tmp_path):
        p = _write(tmp_path, "period,target,z\n200501,0,1.0\n200502,1,2.0\n")
        _write(tmp_path, "z=latent\n", name="data.csv.schema")
        ds = load_csv(p)
        assert ds.kind("z") == "latent"

    def test_missing_in_id_column_is_an_error(self, tmp_path):
        p = _write(tmp_path, "id,period,target\n1,200501,0\n,200502,1\n")
        with pytest.raises(DataError, match="row 2"):
            load_csv(p)


class TestRoundTrip:
    def test_round_trip_is_identity_on_a_generated_dataset(self, tmp_path):
        ds = _random_dataset(np.random.default_rng(1729))
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        save_csv(ds, p1)
        again = load_csv(p1)
        save_csv(again, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert (tmp_path / "a.csv.schema").read_text() == (tmp_path / "b.csv.schema").read_text()

    def test_round_trip_preserves_values_exactly(self, tmp_path):
        ds = _random_dataset(np.random.default_rng(7))
        p = tmp_path / "a.csv"
        save_csv(ds, p)
        again = load_csv(p)
        assert again.names == ds.names
        for name in ds.names:
            a, b = ds.column(name), again.column(name)
            assert a.kind == b.kind
            if a.kind in ("numeric", "latent"):
                npt.assert_array_equal(a.values, b.values)  # NaN == NaN under array_equal
            else:
                assert list(a.values) == list(b.values)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
    def test_float_cells_survive_any_magnitude(self, tmp_path_factory, xs):
        tmp_path = tmp_path_factory.mktemp("rt")
        ds = Dataset(
            [
                Column("period", "period", np.full(len(xs), 200501)),
                Column("target", "target", np.zeros(len(xs), dtype=int)),
                Column("x", "numeric", np.array(xs)),
            ]
        )
        p = tmp_path / "x.csv"
        save_csv(ds, p)
        npt.assert_array_equal(load_csv(p).column("x").values, np.array(xs))


class TestValidation:
    def test_unequal_column_lengths(self):
        with pytest.raises(DataError, match="unequal"):
            Dataset(
                [
                    Column("period", "period", [200501, 200502]),
                    Column("target", "target", [0]),
                ]
            )

    def test_bad_period_value(self):
        with pytest.raises(DataError, match="YYYYMM"):
            Dataset(
                [
                    Column("period", "period", [200513]),
                    Column("target", "target", [0]),
                ]
            )

    def test_target_optional_before_labelling(self):
        ds = Dataset(
            [Column("period", "period", [200501])],
            require_target=False,
        )
        assert ds.n_rows == 1

    def test_duplicate_names(self):
        with pytest.raises(DataError, match="duplicate"):
            Dataset(
                [
                    Column("period", "period", [200501]),
                    Column("target", "target", [0]),
                    Column("x", "numeric", [1.0]),
                    Column("x", "numeric", [2.0]),
                ]
            )


class TestTimePartition:
    def _year(self):
        periods = np.repeat(np.arange(200501, 200513), 3)
        return Dataset(
            [
                Column("period", "period", periods),
                Column("target", "target", np.zeros(periods.size, dtype=int)),
            ]
        )

    def test_months_split_at_boundary(self):
        part = time_partition(self._year(), 200506)
        assert part.train.periods().max() == 200506
        assert part.valid.periods().min() == 200507
        assert part.train.n_rows == 18
        assert part.valid.n_rows == 18

    def test_boundary_row_goes_to_train(self):
        part = time_partition(self._year(), 200501)
        assert part.train.n_rows == 3
        npt.assert_array_equal(part.train.periods(), [200501, 200501, 200501])

    def test_boundary_before_all_periods(self):
        with pytest.raises(DataError, match="precedes"):
            time_partition(self._year(), 200412)

    def test_boundary_after_all_periods(self):
        with pytest.raises(DataError, match="follows"):
            time_partition(self._year(), 200512)

    def test_partition_conserves_rows_and_checksum(self):
        rng = np.random.default_rng(99)
        ds = _random_dataset(rng, n_rows=500)
        part = time_partition(ds, 200506)
        assert part.train.n_rows + part.valid.n_rows == ds.n_rows
        whole = np.sort(ds.column("id").values)
        pieces = np.sort(
            np.concatenate([part.train.column("id").values, part.valid.column("id").values])
        )
        npt.assert_array_equal(whole, pieces)
        total = np.nansum(ds.column("income").values)
        split = np.nansum(part.train.column("income").values) + np.nansum(
            part.valid.column("income").values
        )
        npt.assert_allclose(split, total, rtol=1e-12)


class TestSubsample:
    def test_fraction_one_is_identity(self):
        ds = _random_dataset(np.random.default_rng(3), n_rows=50)
        assert subsample(ds, 1.0, seed=1) is ds

    def test_fraction_half_keeps_half_without_replacement(self):
        ds = _random_dataset(np.random.default_rng(3), n_rows=400)
        sub = subsample(ds, 0.5, seed=1)
        assert sub.n_rows == 200
        ids = sub.column("id").values
        assert len(set(ids.tolist())) == 200
        npt.assert_array_equal(ids, np.sort(ids))

    def test_deterministic_in_seed(self):
        ds = _random_dataset(np.random.default_rng(3), n_rows=400)
        a = subsample(ds, 0.25, seed=11).column("id").values
        b = subsample(ds, 0.25, seed=11).column("id").values
        npt.assert_array_equal(a, b)

    def test_bad_fraction(self):
        ds = _random_dataset(np.random.default_rng(3), n_rows=10)
        with pytest.raises(DataError):
            subsample(ds, 0.0, seed=1)
