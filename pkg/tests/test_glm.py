import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy.stats import kstest

from scorelab.binning import AttributeStats, BinningMap, VariableBinning
from scorelab.coding import (
    DUMMY,
    INTERCEPT,
    NESTED_MONO,
    ColumnLabel,
    DesignMatrix,
    encode_indicator,
)
from scorelab.dataio import Column, Dataset
from scorelab.glm import (
    ADJUSTMENT_METHODS,
    METHODS_BY_NAME,
    GlmError,
    apply_adjustment,
    backward_adjust,
    encode_adjusted,
    fit,
    run_all_adjustments,
    sign_consistency,
    stepwise_adjust,
    variable_lr_pvalues,
)


def make_design(named_columns):
    """Intercept plus one dummy-labeled column per (name, values) pair."""
    n = len(named_columns[0][1])
    values = np.column_stack([np.ones(n)] + [np.asarray(c, dtype=float) for _, c in named_columns])
    labels = [ColumnLabel("", INTERCEPT)] + [
        ColumnLabel(name, DUMMY, attribute=1) for name, _ in named_columns
    ]
    return DesignMatrix(values, labels)


def attribute_panel(counts, name="v"):
    """Binned rows realizing exactly the per-attribute (good, bad) counts."""
    vals, targs = [], []
    for i, (g, b) in enumerate(counts):
        vals += [float(i + 1)] * (g + b)
        targs += [0] * g + [1] * b
    vb = VariableBinning(
        name=name,
        kind="numeric",
        cuts=[i + 1.5 for i in range(len(counts) - 1)],
        attributes={i + 1: AttributeStats(g, b) for i, (g, b) in enumerate(counts)},
    )
    bmap = BinningMap({name: vb}, n_train=len(vals), max_bins=7, max_groups=7, min_share=0.05)
    ds = Dataset(
        [
            Column("period", "period", np.full(len(vals), 200501)),
            Column(name, "numeric", np.array(vals)),
            Column("target", "target", np.array(targs)),
        ]
    )
    return ds, bmap


class TestFit:
    def test_intercept_only_even_split(self):
        dm = DesignMatrix(np.ones((100, 1)), [ColumnLabel("", INTERCEPT)])
        y = np.array([1] * 50 + [0] * 50)
        res = fit(dm, y)
        assert res.converged
        npt.assert_allclose(res.beta, [0.0], atol=1e-10)
        npt.assert_allclose(res.loglik, 100 * math.log(0.5), atol=1e-8)
        assert res.p_values[0] == 1.0
        assert res.max_pvalue() == 1.0

    def test_two_by_two_recovers_log_odds_ratio(self):
        # cells (a,b,c,d) = (40,10,20,30): slope ln((40*30)/(10*20)) = ln 6
        x = np.array([1.0] * 50 + [0.0] * 50)
        y = np.array([1] * 40 + [0] * 10 + [1] * 20 + [0] * 30)
        res = fit(make_design([("flag", x)]), y)
        npt.assert_allclose(res.beta[1], math.log(6.0), atol=1e-8)
        npt.assert_allclose(res.beta[0], math.log(20.0 / 30.0), atol=1e-8)
        assert res.converged

    def test_predictions_invariant_to_affine_rescaling(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=250)
        y = (rng.random(250) < 1.0 / (1.0 + np.exp(-(0.4 + 0.9 * x)))).astype(int)
        raw = fit(make_design([("x", x)]), y)
        scaled = fit(make_design([("x", 3.7 * x + 2.1)]), y)
        p_raw = raw.predict(make_design([("x", x)]).values)
        p_scaled = scaled.predict(make_design([("x", 3.7 * x + 2.1)]).values)
        npt.assert_allclose(p_raw, p_scaled, atol=1e-8)
        npt.assert_allclose(scaled.beta[1], raw.beta[1] / 3.7, rtol=1e-6)

    def test_loglik_trace_never_decreases(self):
        rng = np.random.default_rng(11)
        x1 = rng.normal(size=300)
        x2 = rng.normal(size=300)
        y = (rng.random(300) < 1.0 / (1.0 + np.exp(-(x1 - 0.5 * x2)))).astype(int)
        res = fit(make_design([("a", x1), ("b", x2)]), y)
        diffs = np.diff(res.loglik_trace)
        assert (diffs >= -1e-9 * (1.0 + abs(res.loglik))).all()

    def test_covariance_symmetric_psd_and_pvalues_bounded(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(400, 2))
        y = (rng.random(400) < 1.0 / (1.0 + np.exp(-(0.3 + x @ [0.8, -0.6])))).astype(int)
        res = fit(make_design([("a", x[:, 0]), ("b", x[:, 1])]), y)
        npt.assert_allclose(res.covariance, res.covariance.T, atol=1e-12)
        assert np.linalg.eigvalsh(res.covariance).min() >= -1e-10
        assert ((res.p_values >= 0.0) & (res.p_values <= 1.0)).all()

    def test_complete_separation_flagged_not_raised(self):
        x = np.concatenate([-np.arange(1, 31) / 10.0, np.arange(1, 31) / 10.0])
        y = (x > 0).astype(int)
        res = fit(make_design([("split", x)]), y)
        assert not res.converged
        assert any("separation" in w for w in res.warnings)
        assert np.isfinite(res.beta).all()

    def test_duplicate_column_raises_naming_dependents(self):
        x = np.arange(80, dtype=float) % 7
        y = (np.arange(80) % 3 == 0).astype(int)
        dm = make_design([("left", x), ("right", x)])
        with pytest.raises(GlmError, match="dependent columns"):
            fit(dm, y)
        try:
            fit(dm, y)
        except GlmError as err:
            assert "left[1]" in str(err) or "right[1]" in str(err)

    def test_more_columns_than_rows_rejected(self):
        dm = make_design([("a", [1.0, 0.0]), ("b", [0.0, 1.0])])
        with pytest.raises(GlmError, match="rows"):
            fit(dm, np.array([0, 1]))

    def test_nonbinary_targets_rejected(self):
        dm = DesignMatrix(np.ones((4, 1)), [ColumnLabel("", INTERCEPT)])
        with pytest.raises(GlmError, match="binary"):
            fit(dm, np.array([0, 1, 2, 1]))

    def test_null_wald_pvalues_look_uniform(self):
        # slope p-value under a true zero effect across 200 refits
        pvals = []
        for rep in range(200):
            rng = np.random.default_rng(5000 + rep)
            x = rng.normal(size=400)
            y = (rng.random(400) < 0.5).astype(int)
            res = fit(make_design([("x", x)]), y)
            pvals.append(res.p_values[1])
        assert kstest(pvals, "uniform").pvalue > 0.01

    def test_text_block_mentions_labels_and_loglik(self):
        dm = DesignMatrix(np.ones((10, 1)), [ColumnLabel("", INTERCEPT)])
        res = fit(dm, np.array([0, 1] * 5))
        block = res.text_block()
        assert "loglik=" in block and "intercept" in block


class TestBackwardAdjust:
    def _signal_design(self, rng, n=2000, with_noise=True):
        x1 = rng.normal(size=n)
        x2 = rng.normal(size=n)
        eta = -0.5 + 1.1 * x1 - 0.9 * x2
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(int)
        cols = [("s1", x1), ("s2", x2)]
        if with_noise:
            cols.append(("noise", rng.choice([-1.0, 1.0], size=n)))
        return make_design(cols), y

    def test_all_significant_is_a_fixed_point(self):
        dm, y = self._signal_design(np.random.default_rng(21), with_noise=False)
        res = backward_adjust(dm, y)
        assert res.trail == []
        assert [lab.text() for lab in res.labels] == ["intercept", "s1[1]", "s2[1]"]

    def test_pure_noise_column_removed_first_in_95_of_100_runs(self):
        removed_first = 0
        for rep in range(100):
            dm, y = self._signal_design(np.random.default_rng(9000 + rep))
            res = backward_adjust(dm, y)
            if res.trail and res.trail[0].startswith("removed noise[1]"):
                removed_first += 1
        assert removed_first >= 95

    def test_termination_leaves_no_pvalue_above_stay(self):
        dm, y = self._signal_design(np.random.default_rng(33))
        res = backward_adjust(dm, y, stay_p=0.05)
        assert res.max_pvalue() <= 0.05

    def test_elimination_is_deterministic(self):
        dm, y = self._signal_design(np.random.default_rng(40))
        first = backward_adjust(dm, y)
        second = backward_adjust(dm, y)
        assert first.trail == second.trail
        npt.assert_array_equal(first.beta, second.beta)

    def test_single_column_variable_drop_is_flagged(self):
        dm, y = self._signal_design(np.random.default_rng(52))
        res = backward_adjust(dm, y)
        if res.trail:  # the noise variable had exactly one column
            assert any("lost its last column" in w for w in res.warnings)


class TestStepwiseAdjust:
    def _ten_column_design(self, seed=17, n=1500):
        rng = np.random.default_rng(seed)
        cols = rng.random((n, 10)) < 0.4
        cols = cols.astype(float)
        eta = -0.8 + 1.0 * cols[:, 0] - 0.9 * cols[:, 1] + 0.8 * cols[:, 2]
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(int)
        named = [(f"c{j}", cols[:, j]) for j in range(10)]
        return make_design(named), y

    def test_strongest_column_enters_first(self):
        rng = np.random.default_rng(61)
        strong = rng.choice([0.0, 1.0], size=1200)
        weak = rng.normal(size=1200)
        y = (rng.random(1200) < 1.0 / (1.0 + np.exp(-(-1.0 + 1.5 * strong)))).astype(int)
        dm = make_design([("weak", weak), ("strong", strong)])
        res = stepwise_adjust(dm, y)
        assert res.trail[0].startswith("entered strong[1]")

    def test_zero_entry_threshold_keeps_intercept_only(self):
        dm, y = self._ten_column_design()
        res = stepwise_adjust(dm, y, entry_p=0.0)
        assert [lab.text() for lab in res.labels] == ["intercept"]
        assert res.trail == []

    def test_final_pvalues_within_stay_threshold(self):
        dm, y = self._ten_column_design()
        res = stepwise_adjust(dm, y)
        assert res.max_pvalue() <= 0.05
        entered = {lab.text() for lab in res.labels}
        assert {"c0[1]", "c1[1]", "c2[1]"} <= entered

    def test_runs_are_deterministic(self):
        dm, y = self._ten_column_design(seed=23)
        first = stepwise_adjust(dm, y)
        second = stepwise_adjust(dm, y)
        assert first.trail == second.trail
        npt.assert_array_equal(first.beta, second.beta)


class TestAdjustmentMethods:
    def test_twelve_names_in_fixed_order(self):
        names = [m.name for m in ADJUSTMENT_METHODS]
        assert names == [
            "NBA", "NBD", "NBM", "NSA", "NSD", "NSM",
            "DBA", "DBD", "DBM", "DSA", "DSD", "DSM",
        ]
        assert len(set(ADJUSTMENT_METHODS)) == 12

    def test_fields_follow_the_three_letter_code(self):
        for m in ADJUSTMENT_METHODS:
            assert m.estimation == {"N": "nested", "D": "dummy"}[m.name[0]]
            assert m.selection == {"B": "backward", "S": "stepwise"}[m.name[1]]
            assert m.coding.endswith({"A": "ASC", "D": "DESC", "M": "MONO"}[m.name[2]])

    def test_noop_adjustment_equals_plain_nested_fit(self):
        ds, bmap = attribute_panel(((900, 100), (800, 200), (700, 300), (990, 10)))
        res = apply_adjustment(METHODS_BY_NAME["NBM"], ds, bmap, ["v"])
        assert res.groupings == {"v": {1: 1, 2: 2, 3: 3, 4: 4}}
        direct = fit(encode_indicator(ds, bmap, NESTED_MONO, ["v"]), ds.target())
        npt.assert_allclose(res.fit.beta, direct.beta, atol=1e-10)
        assert res.collapsed == []

    def test_backward_merges_equal_rate_neighbours(self):
        # groups 2 and 3 share a default rate; their boundary must go
        ds, bmap = attribute_panel(((900, 100), (500, 100), (1500, 300), (990, 10)))
        res = apply_adjustment(METHODS_BY_NAME["NBM"], ds, bmap, ["v"])
        assert res.groupings == {"v": {1: 1, 2: 2, 3: 2, 4: 3}}
        boundaries = sorted(
            lab.boundary for lab in res.fit.labels if lab.boundary is not None
        )
        assert boundaries == [1, 2]

    def test_dummy_and_nested_estimation_span_the_same_fit(self):
        ds, bmap = attribute_panel(((900, 100), (500, 100), (1500, 300), (990, 10)))
        results = run_all_adjustments(ds, bmap, ["v"])
        nbm, dbm = results["NBM"], results["DBM"]
        assert nbm.groupings == dbm.groupings
        p_n = nbm.fit.predict(encode_adjusted(nbm, ds, bmap).values)
        p_d = dbm.fit.predict(encode_adjusted(dbm, ds, bmap).values)
        npt.assert_allclose(p_n, p_d, atol=1e-6)

    def test_run_all_returns_methods_in_order(self):
        ds, bmap = attribute_panel(((300, 30), (280, 60), (260, 90)))
        results = run_all_adjustments(ds, bmap, ["v"])
        assert list(results) == [m.name for m in ADJUSTMENT_METHODS]

    def test_flat_variable_collapses_and_is_flagged(self):
        ds, bmap = attribute_panel(((500, 50), (500, 50), (500, 50), (500, 50)))
        res = apply_adjustment(METHODS_BY_NAME["NBA"], ds, bmap, ["v"])
        assert res.collapsed == ["v"]
        assert [lab.scheme for lab in res.fit.labels] == [INTERCEPT]
        assert any("collapsed" in w for w in res.fit.warnings)

    def test_stepwise_variant_matches_backward_on_clean_panel(self):
        ds, bmap = attribute_panel(((900, 100), (500, 100), (1500, 300), (990, 10)))
        backward = apply_adjustment(METHODS_BY_NAME["NBM"], ds, bmap, ["v"])
        stepwise = apply_adjustment(METHODS_BY_NAME["NSM"], ds, bmap, ["v"])
        assert stepwise.groupings == backward.groupings
        assert stepwise.fit.max_pvalue() <= 0.05


class TestReportingHelpers:
    def test_variable_lr_separates_signal_from_noise(self):
        rng = np.random.default_rng(71)
        s = rng.normal(size=800)
        z = rng.normal(size=800)
        y = (rng.random(800) < 1.0 / (1.0 + np.exp(-(0.2 + 1.2 * s)))).astype(int)
        dm = make_design([("s", s), ("z", z)])
        ps = variable_lr_pvalues(dm, y)
        assert set(ps) == {"s", "z"}
        assert ps["s"] < 1e-6
        assert 0.0 <= ps["z"] <= 1.0
        assert ps["z"] > 1e-4

    def test_sign_consistency_counts_nested_variables(self):
        ds, bmap = attribute_panel(((990, 10), (900, 100), (800, 200), (700, 300)))
        res = fit(encode_indicator(ds, bmap, NESTED_MONO, ["v"]), ds.target())
        assert sign_consistency(res) == (1, 1)

    def test_sign_consistency_without_nested_columns(self):
        dm = DesignMatrix(np.ones((10, 1)), [ColumnLabel("", INTERCEPT)])
        res = fit(dm, np.array([0, 1] * 5))
        assert sign_consistency(res) == (0, 0)
