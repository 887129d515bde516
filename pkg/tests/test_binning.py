import math

import numpy as np
import numpy.testing as npt
import pytest

from scorelab.binning import (
    AttributeStats,
    BinningError,
    apply_binning,
    attribute_ids,
    binning_from_text,
    binning_to_text,
    entropy_bin,
    fit_binning,
    merge_categories,
)
from scorelab.dataio import Column, Dataset
from scorelab.datagen import GeneratorConfig, generate_labeled


def count_entropy(n_bad, n):
    if n == 0 or n_bad == 0 or n_bad == n:
        return 0.0
    p = n_bad / n
    return -n * (p * math.log(p) + (1 - p) * math.log(1 - p))


def best_cut_by_scan(x, y, min_share):
    """Oracle: evaluate the gain of every midpoint between distinct values."""
    n = len(x)
    order = np.argsort(x, kind="stable")
    xs, ys = np.asarray(x, float)[order], np.asarray(y)[order]
    min_n = max(1, math.ceil(min_share * n))
    total = count_entropy(ys.sum(), n)
    best_gain, best_cut = -1.0, None
    for pos in range(1, n):
        if xs[pos] == xs[pos - 1]:
            continue
        if pos < min_n or n - pos < min_n:
            continue
        gain = total - count_entropy(ys[:pos].sum(), pos) - count_entropy(ys[pos:].sum(), n - pos)
        if gain > best_gain:
            best_gain, best_cut = gain, (xs[pos - 1] + xs[pos]) / 2.0
    return best_cut


class TestEntropyBin:
    def test_perfect_separation_single_cut(self):
        x = [1, 2, 3, 4, 6, 7, 8, 9]
        y = [0, 0, 0, 0, 1, 1, 1, 1]
        cuts, degenerate = entropy_bin(x, y)
        assert cuts == [5.0]
        assert not degenerate

    def test_constant_column_is_degenerate(self):
        cuts, degenerate = entropy_bin([3.0] * 50, [0, 1] * 25)
        assert cuts == []
        assert degenerate

    @pytest.mark.parametrize("seed", range(6))
    def test_first_cut_matches_exhaustive_scan(self, seed):
        rng = np.random.default_rng([seed, 31])
        x = rng.standard_normal(200)
        y = (rng.random(200) < 1 / (1 + np.exp(-1.5 * x))).astype(int)
        cuts, _ = entropy_bin(x, y, max_bins=2, min_share=0.05)
        oracle = best_cut_by_scan(x, y, 0.05)
        assert len(cuts) == 1
        npt.assert_allclose(cuts[0], oracle, atol=1e-12)

    def test_max_bins_caps_cut_count(self):
        rng = np.random.default_rng(123)
        x = rng.random(500)
        y = (rng.random(500) < x).astype(int)
        cuts, _ = entropy_bin(x, y, max_bins=4, min_share=0.01)
        assert len(cuts) <= 3

    def test_min_share_blocks_thin_splits(self):
        # the informative boundary isolates 2% of rows; no feasible cut remains
        x = np.concatenate([np.zeros(98), np.ones(2)])
        y = np.concatenate([np.zeros(98, int), np.ones(2, int)])
        cuts, degenerate = entropy_bin(x, y, max_bins=7, min_share=0.05)
        assert cuts == []
        assert not degenerate

    def test_missing_rows_count_toward_share_floor(self):
        # 50 real rows but 50 missing: each side of a cut must hold 10 rows,
        # of the full 100, not of the 50 seen
        x = np.concatenate([np.arange(50.0), np.full(50, np.nan)])
        y = np.concatenate([np.repeat([0, 1], 25), np.zeros(50, int)])
        cuts, _ = entropy_bin(x, y, max_bins=2, min_share=0.1)
        assert cuts == [24.5]
        none_cuts, _ = entropy_bin(x, y, max_bins=2, min_share=0.3)
        assert none_cuts == []

    def test_zero_gain_stops_early(self):
        x = np.arange(100.0)
        y = np.zeros(100, int)  # pure sample: nothing to gain
        cuts, degenerate = entropy_bin(x, y, max_bins=7, min_share=0.05)
        assert cuts == []
        assert not degenerate


def weighted_wss(stats, boundaries):
    """Within-group weighted sum of squared rate deviations for one split."""
    total = 0.0
    edges = [0, *boundaries, len(stats)]
    for lo, hi in zip(edges, edges[1:]):
        block = stats[lo:hi]
        n = sum(c for _, c in block)
        mean = sum(r * c for r, c in block) / n
        total += sum(c * (r - mean) ** 2 for r, c in block)
    return total


class TestMergeCategories:
    def _data(self, recipe):
        """recipe: list of (level, n, n_bad) -> (levels, targets)."""
        levels, targets = [], []
        for name, n, bad in recipe:
            levels += [name] * n
            targets += [1] * bad + [0] * (n - bad)
        return np.array(levels, dtype=object), np.array(targets)

    def test_identical_rates_merge_first(self):
        levels, targets = self._data([("a", 40, 4), ("b", 40, 4), ("c", 40, 20)])
        grouping, _ = merge_categories(levels, targets, max_groups=2)
        assert grouping["a"] == grouping["b"] != grouping["c"]

    def test_two_equal_levels_collapse_at_max_groups_one(self):
        levels, targets = self._data([("x", 30, 3), ("y", 30, 3)])
        grouping, degenerate = merge_categories(levels, targets, max_groups=1)
        assert grouping == {"x": 1, "y": 1}
        assert not degenerate

    def test_small_level_absorbed_by_closest_rate_neighbour(self):
        levels, targets = self._data([("big_low", 500, 90), ("tiny", 10, 2), ("big_high", 490, 245)])
        grouping, _ = merge_categories(levels, targets, max_groups=7, min_share=0.05)
        # tiny (rate .2) sits between .18 and .5; the nearer rate wins
        assert grouping["tiny"] == grouping["big_low"]
        assert grouping["big_high"] != grouping["big_low"]

    def test_single_level_degenerate(self):
        levels, targets = self._data([("only", 50, 10)])
        grouping, degenerate = merge_categories(levels, targets)
        assert grouping == {"only": 1}
        assert degenerate

    def test_group_ids_ordered_by_rate(self):
        levels, targets = self._data([("hot", 100, 60), ("cold", 100, 5), ("warm", 100, 30)])
        grouping, _ = merge_categories(levels, targets, max_groups=3)
        assert grouping == {"cold": 1, "warm": 2, "hot": 3}

    def test_ten_levels_match_exhaustive_partition_oracle(self):
        bads = [1, 2, 3, 30, 31, 32, 33, 70, 71, 72]
        names = ["m", "c", "x", "a", "q", "z", "e", "r", "b", "k"]
        recipe = [(names[i], 100, bads[i]) for i in range(10)]
        levels, targets = self._data(recipe)
        grouping, _ = merge_categories(levels, targets, max_groups=3, min_share=0.01)

        stats = sorted(((bads[i] / 100, 100) for i in range(10)))
        best, best_cutoffs = None, None
        for i in range(1, 9):
            for j in range(i + 1, 10):
                wss = weighted_wss(stats, (i, j))
                if best is None or wss < best:
                    best, best_cutoffs = wss, (i, j)
        by_rate = sorted(range(10), key=lambda i: bads[i])
        expected = {}
        for gid, (lo, hi) in enumerate(
            zip((0, *best_cutoffs), (*best_cutoffs, 10)), start=1
        ):
            for i in by_rate[lo:hi]:
                expected[names[i]] = gid
        assert grouping == expected


def _toy_dataset(n=400, seed=0, missing_share=0.0):
    rng = np.random.default_rng([seed, 61])
    x = rng.standard_normal(n)
    y = (rng.random(n) < 1 / (1 + np.exp(-2 * x))).astype(int)
    seg = rng.choice(["a", "b", "c"], n, p=[0.5, 0.3, 0.2]).astype(object)
    if missing_share:
        x = x.copy()
        x[rng.random(n) < missing_share] = np.nan
    return Dataset(
        [
            Column("period", "period", np.full(n, 200501)),
            Column("x", "numeric", x),
            Column("seg", "categorical", seg),
            Column("target", "target", y),
        ]
    )


class TestFitApply:
    def test_value_below_first_cut_is_attribute_one(self):
        ds = _toy_dataset()
        bmap = fit_binning(ds)
        vb = bmap.variables["x"]
        assert vb.cuts
        probe = Column("x", "numeric", np.array([vb.cuts[0] - 10.0]))
        ids, _ = attribute_ids(vb, probe)
        assert ids[0] == 1

    def test_boundary_value_falls_in_lower_attribute(self):
        ds = _toy_dataset()
        vb = fit_binning(ds).variables["x"]
        probe = Column("x", "numeric", np.array([vb.cuts[0]]))
        ids, _ = attribute_ids(vb, probe)
        assert ids[0] == 1

    def test_missing_with_large_share_gets_own_attribute(self):
        ds = _toy_dataset(missing_share=0.10)
        vb = fit_binning(ds).variables["x"]
        assert vb.missing_separate
        assert vb.missing_attribute == len(vb.cuts) + 2
        assert vb.missing_attribute in vb.attributes

    def test_missing_with_small_share_merges_by_rate(self):
        ds = _toy_dataset(n=2000, missing_share=0.01)
        vb = fit_binning(ds).variables["x"]
        assert not vb.missing_separate
        assert 1 <= vb.missing_attribute <= len(vb.cuts) + 1

    def test_unseen_level_goes_to_largest_group_with_warning(self):
        train = _toy_dataset()
        bmap = fit_binning(train)
        vb = bmap.variables["seg"]
        probe = Dataset(
            [
                Column("period", "period", [200601, 200601]),
                Column("seg", "categorical", np.array(["a", "zz"], dtype=object)),
                Column("target", "target", [0, 1]),
            ]
        )
        binned, warnings = apply_binning(bmap, probe)
        assert warnings == {"seg": 1}
        largest = max(
            (a for a in vb.attributes if a <= max(vb.groups.values())),
            key=lambda a: vb.attributes[a].n,
        )
        assert binned.column("seg").values[1] == largest

    def test_apply_reproduces_training_counts(self):
        data = generate_labeled(GeneratorConfig(seed=31, months=20, accounts_per_month=30))
        bmap = fit_binning(data)
        binned, warnings = apply_binning(bmap, data)
        assert warnings == {}
        y = binned.target()
        for name, vb in bmap.variables.items():
            ids = binned.column(name).values.astype(int)
            for a, st in vb.attributes.items():
                sel = ids == a
                assert int(np.sum(sel & (y == 0))) == st.n_good, (name, a)
                assert int(np.sum(sel & (y == 1))) == st.n_bad, (name, a)

    def test_fit_is_deterministic(self):
        data = generate_labeled(GeneratorConfig(seed=32, months=16, accounts_per_month=20))
        a = binning_to_text(fit_binning(data))
        b = binning_to_text(fit_binning(data))
        assert a == b

    def test_attribute_ids_monotone_in_value(self):
        ds = _toy_dataset(n=600, seed=5)
        vb = fit_binning(ds).variables["x"]
        xs = np.sort(ds.column("x").values)
        ids, _ = attribute_ids(vb, Column("x", "numeric", xs))
        assert np.all(np.diff(ids) >= 0)

    def test_binned_dataset_shape_and_passthrough(self):
        data = generate_labeled(GeneratorConfig(seed=33, months=12, accounts_per_month=10))
        bmap = fit_binning(data)
        binned, _ = apply_binning(bmap, data)
        assert binned.kind("age") == "numeric"
        assert binned.kind("segment") == "numeric"
        assert set(binned.names) == set(
            ["id", "period", "latent_score", "latent_macro", "target", *bmap.variables]
        )

    def test_share_floor_holds_on_fitted_attributes(self):
        data = generate_labeled(GeneratorConfig(seed=34, months=20, accounts_per_month=30))
        bmap = fit_binning(data, min_share=0.05)
        for name, vb in bmap.variables.items():
            if vb.degenerate:
                continue
            for a, st in vb.attributes.items():
                assert st.n >= 0.05 * bmap.n_train - 1, (name, a)

    def test_pure_attribute_logit_is_finite(self):
        st = AttributeStats(n_good=0, n_bad=10)
        npt.assert_allclose(st.logit, math.log(10.5 / 0.5))
        assert math.isfinite(AttributeStats(n_good=7, n_bad=0).logit)


class TestSerialization:
    def test_text_round_trip_is_stable(self):
        data = generate_labeled(GeneratorConfig(seed=35, months=16, accounts_per_month=25))
        bmap = fit_binning(data)
        text = binning_to_text(bmap)
        again = binning_to_text(binning_from_text(text))
        assert text == again

    def test_loaded_map_applies_identically(self):
        data = generate_labeled(GeneratorConfig(seed=36, months=14, accounts_per_month=15))
        bmap = fit_binning(data)
        loaded = binning_from_text(binning_to_text(bmap))
        a, _ = apply_binning(bmap, data)
        b, _ = apply_binning(loaded, data)
        for name in bmap.variables:
            npt.assert_array_equal(a.column(name).values, b.column(name).values)

    def test_malformed_text_rejected(self):
        with pytest.raises(BinningError):
            binning_from_text("n_train = 5\nmax_bins = 7\n")  # missing fields
        with pytest.raises(BinningError):
            binning_from_text("nonsense without equals\n")
