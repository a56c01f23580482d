import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cxplain import uncertainty
from cxplain.core import ContractError
from cxplain.evaluation import (
    EmptyBenchmarkError,
    EvalReport,
    UndefinedCorrelationError,
    delta_log_odds_benchmark,
    delta_log_odds_topq,
    descending_ranks,
    fisher_z,
    log_odds,
    mww_test,
    normalize_explanation,
    pearson,
    per_feature_delta_log_odds,
    predicted_class_probability,
    random_attributions,
    rank_error,
    select_evaluable,
    summarize,
    top_groups,
    top_q_count,
    uncertainty_correlation_benchmark,
)
from cxplain.masking import MaskingStrategy, grid_grouping, identity_grouping
from cxplain.models import analytic_model

ZERO = MaskingStrategy.zero()


class TestLogOdds:
    def test_examples(self):
        assert log_odds(0.5) == 0
        assert log_odds(0.9) == pytest.approx(math.log(9), abs=1e-12)
        assert log_odds(1.0) == pytest.approx(16.118, abs=1e-3)
        assert math.isfinite(log_odds(0.0))

    def test_vectorised(self):
        np.testing.assert_allclose(log_odds([0.25, 0.75]), [-math.log(3), math.log(3)])


class TestNormalizeExplanation:
    def test_examples(self):
        np.testing.assert_allclose(normalize_explanation([1, -1]), [0.5, 0.5])
        np.testing.assert_allclose(normalize_explanation([0, 0, 0]), [1 / 3] * 3)

    def test_simplex_unchanged(self, rng):
        v = rng.dirichlet(np.ones(5))
        np.testing.assert_allclose(normalize_explanation(v), v, atol=1e-15)


class TestTopQ:
    def test_count(self):
        assert top_q_count(0.1, 49) == 5
        assert top_q_count(0.1, 30) == 3
        assert top_q_count(0.99, 3) == 3

    def test_ties_to_lower_index(self):
        assert top_groups([0.2, 0.4, 0.4, 0.0], 2).tolist() == [1, 2]
        assert top_groups([0.25] * 4, 3).tolist() == [0, 1, 2]

    def test_constant_model_zero(self, rng):
        m = analytic_model("constant", c=0.7)
        x = rng.uniform(size=6)
        assert delta_log_odds_topq(m, x, np.full(6, 1 / 6), 0.5, identity_grouping(6), ZERO) == 0

    def test_sigmoid_toy(self):
        m = analytic_model("sigmoid_linear", w=[4.0, 0.0, 0.0], b=-2.0)
        value = delta_log_odds_topq(m, np.ones(3), [0.8, 0.1, 0.1], 0.2, identity_grouping(3), ZERO)
        assert value == pytest.approx(4.0, abs=1e-9)

    def test_full_mask_equals_masking_everything(self, rng):
        w = rng.normal(size=5)
        m = analytic_model("sigmoid_linear", w=w, b=0.3)
        x = rng.uniform(size=5)
        value = delta_log_odds_topq(m, x, rng.dirichlet(np.ones(5)), 0.99, identity_grouping(5), ZERO)
        p0 = m.predict(x[None])[0, 0]
        p1 = m.predict(np.zeros((1, 5)))[0, 0]
        assert value == pytest.approx(log_odds(p0) - log_odds(p1), abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        p = 7
        w, x, a = rng.normal(size=p), rng.uniform(size=p), rng.dirichlet(np.ones(p))
        perm = rng.permutation(p)
        g = identity_grouping(p)
        m = analytic_model("sigmoid_linear", w=w, b=0.1)
        mp = analytic_model("sigmoid_linear", w=w[perm], b=0.1)
        base = delta_log_odds_topq(m, x, a, 0.3, g, ZERO)
        assert delta_log_odds_topq(mp, x[perm], a[perm], 0.3, g, ZERO) == pytest.approx(base, abs=1e-9)

    def test_predicted_class_is_used(self):
        m = analytic_model("sigmoid_linear", w=[-4.0, 0.0], b=0.0, two_class=True)
        # class 0 is predicted for x_0 = 1; masking x_0 drops its probability to 0.5
        value = delta_log_odds_topq(m, np.array([1.0, 1.0]), [0.9, 0.1], 0.5, identity_grouping(2), ZERO)
        assert value == pytest.approx(4.0, abs=1e-9)

    def test_attribution_length_checked(self):
        m = analytic_model("constant", c=0.5)
        with pytest.raises(ContractError):
            delta_log_odds_topq(m, np.ones(3), [0.5, 0.5], 0.5, identity_grouping(3), ZERO)


class TestPerFeature:
    def test_constant_model(self, rng):
        out = per_feature_delta_log_odds(analytic_model("constant", c=0.4), rng.uniform(size=4),
                                         identity_grouping(4), ZERO)
        np.testing.assert_array_equal(out, np.zeros(4))

    def test_single_informative(self, threshold_model):
        out = per_feature_delta_log_odds(threshold_model(4), np.array([0.9, 0.2, 0.7, 0.4]),
                                         identity_grouping(4), ZERO)
        assert out[0] > 10
        np.testing.assert_allclose(out[1:], 0, atol=1e-9)

    def test_additive_logit_contributions(self, rng):
        w = np.array([2.0, -1.0, 0.5, 3.0])
        m = analytic_model("sigmoid_linear", w=w, b=-0.4)
        x = rng.uniform(size=4)
        out = per_feature_delta_log_odds(m, x, identity_grouping(4), ZERO)
        np.testing.assert_allclose(out, w * x, atol=1e-9)

    def test_grouped_contributions(self, rng):
        w = rng.normal(size=16)
        m = analytic_model("sigmoid_linear", w=w, b=0.0)
        x = rng.uniform(size=16)
        g = grid_grouping(4, 4, 2, 2)
        out = per_feature_delta_log_odds(m, x, g, ZERO)
        np.testing.assert_allclose(out, [float(w[grp] @ x[grp]) for grp in g.groups], atol=1e-9)


class TestRankError:
    def test_examples(self):
        assert rank_error([3, 2, 1], [3, 2, 1]).tolist() == [0, 0, 0]
        assert rank_error([3, 2, 1], [1, 2, 3]).tolist() == [2, 0, 2]
        assert rank_error([0.1, 0.5, 0.3], [5.1, 5.5, 5.3]).tolist() == [0, 0, 0]

    def test_descending_ranks_ties(self):
        assert descending_ranks([1, 3, 3, 0]).tolist() == [2, 0, 1, 3]

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60)
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        t, e = rng.normal(size=10), rng.normal(size=10)
        base = rank_error(t, e)
        assert np.array_equal(rank_error(np.exp(t), 3 * e + 1), base)
        assert np.array_equal(rank_error(t ** 3, np.arctan(e)), base)

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            rank_error([1, 2], [1, 2, 3])


class TestCorrelation:
    def test_pearson_examples(self):
        a = np.array([1.0, 2.0, 5.0])
        assert pearson(a, a) == pytest.approx(1.0)
        assert pearson(a, -a) == pytest.approx(-1.0)
        assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.981981, abs=1e-6)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40)
    def test_pearson_matches_scipy(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=12), rng.normal(size=12)
        assert pearson(a, b) == pytest.approx(stats.pearsonr(a, b)[0], abs=1e-12)

    def test_constant_vector(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1, 1, 1], [1, 2, 3])

    def test_fisher_z(self):
        assert fisher_z(0.0) == 0
        assert fisher_z(0.5) == pytest.approx(0.549306, abs=1e-6)
        with pytest.raises(ValueError):
            fisher_z(1.0)

    @given(st.floats(-0.999, 0.999), st.floats(-0.999, 0.999))
    def test_fisher_z_odd_and_increasing(self, r, s):
        assert fisher_z(-r) == -fisher_z(r)
        if r < s:
            assert fisher_z(r) < fisher_z(s)


class TestMWW:
    def test_exact_example(self):
        res = mww_test([1, 2, 3], [4, 5, 6])
        assert res.u_a == 0 and res.method == "exact"
        assert res.p_value == pytest.approx(0.1, abs=1e-12)

    def test_identical_samples(self):
        res = mww_test([1, 2, 3, 4], [1, 2, 3, 4])
        assert res.u_a == 8 and res.u_b == 8
        assert res.p_value == 1.0

    @given(st.integers(0, 2**32 - 1), st.integers(1, 10), st.integers(1, 10))
    @settings(max_examples=40, deadline=None)
    def test_symmetry(self, seed, na, nb):
        rng = np.random.default_rng(seed)
        a, b = rng.integers(0, 5, size=na), rng.integers(0, 5, size=nb)
        ab, ba = mww_test(a, b), mww_test(b, a)
        assert ab.u_a == ba.u_b == na * nb - ab.u_b
        assert ab.p_value == pytest.approx(ba.p_value, abs=1e-12)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 10), st.integers(2, 10))
    @settings(max_examples=40, deadline=None)
    def test_exact_matches_scipy_without_ties(self, seed, na, nb):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=na), rng.normal(size=nb) + 0.5
        ours = mww_test(a, b)
        ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="exact")
        assert ours.u_a == ref.statistic
        assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_normal_matches_scipy_with_ties(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.integers(0, 8, size=25), rng.integers(1, 9, size=30)
        ours = mww_test(a, b)
        ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
        assert ours.method == "normal"
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-15)

    def test_large_shift(self, rng):
        res = mww_test(rng.normal(size=100), rng.normal(size=100) + 10)
        assert res.u_a == 0 and res.p_value < 0.001

    def test_empty(self):
        with pytest.raises(ContractError):
            mww_test([], [1.0])


class TestBenchmarkHelpers:
    def test_random_attributions(self):
        a = random_attributions(5, 4, seed=1)
        np.testing.assert_allclose(a.sum(axis=1), 1)
        assert np.array_equal(a, random_attributions(5, 4, seed=1))

    def test_delta_log_odds_benchmark_shapes(self, rng):
        m = analytic_model("sigmoid_linear", w=[4.0, 0.0, 0.0], b=-2.0)
        X = np.ones((3, 3))
        out = delta_log_odds_benchmark(m, X, {"peak": np.tile([0.8, 0.1, 0.1], (3, 1))}, 0.2,
                                       identity_grouping(3), ZERO)
        np.testing.assert_allclose(out["peak"], 4.0, atol=1e-9)
        with pytest.raises(ContractError):
            delta_log_odds_benchmark(m, X, {"bad": np.ones((2, 3)) / 3}, 0.2, identity_grouping(3), ZERO)

    def test_summarize(self):
        s = summarize([1, 2, 3, 4, 5])
        assert (s["n"], s["median"], s["q1"], s["q3"], s["mean"]) == (5, 3, 2, 4, 3)

    def test_select_evaluable_orders(self):
        truth = np.array([5.0, -1.0, 3.0, 0.0, 4.0, 2.0, -2.0, 1.0])
        # five positives; ceil(0.5 * 5) = 3
        assert select_evaluable(truth, 0.5, "positive_first").tolist() == [0, 4, 2]
        # ceil(0.5 * 8) = 4 of all, all positive
        assert select_evaluable(truth, 0.5, "top_first").tolist() == [0, 4, 2, 5]
        assert select_evaluable(-np.abs(truth), 0.5).size == 0


class _Stub:
    def __init__(self, grouping):
        self.grouping = grouping


def _constructed_members(rng, truth, n):
    """Members whose median misranks features and whose spread grows with the rank error."""
    p = truth.size
    centre = rng.dirichlet(np.ones(p), size=n)
    members = np.empty((3, n, p))
    for j in range(n):
        re = rank_error(truth, centre[j])
        spread = 1e-4 * (re + 1 + rng.uniform(size=p))
        members[:, j] = centre[j] + np.array([-1, 0, 1])[:, None] * spread
    return members


class TestUncertaintyBenchmark:
    def _run(self, monkeypatch, rng, n=100, p=40, seed=0):
        g = identity_grouping(p)
        truth = rng.uniform(0.1, 1.0, size=(n, p))
        members = np.stack([_constructed_members(rng, truth[j], 1)[:, 0] for j in range(n)], axis=1)
        monkeypatch.setattr(uncertainty, "member_attributions", lambda ens, X, threads=1: members)
        return uncertainty_correlation_benchmark(None, {3: _Stub(g)}, np.zeros((n, p)), g, ZERO,
                                                 top_fraction=0.5, seed=seed, truth=truth)

    def test_constructed_positive_correlation(self, monkeypatch, rng):
        res = self._run(monkeypatch, rng)
        assert res.mean_z(3) > 0.5
        assert res.n_images == 100 and not res.skipped

    def test_random_baseline_near_zero(self, monkeypatch, rng):
        res = self._run(monkeypatch, rng, seed=17)
        assert abs(res.random_mean_z) <= 0.1

    def test_skips_are_counted(self, monkeypatch, rng):
        g = identity_grouping(4)
        truth = np.array([[1.0, -1, -1, -1], [1.0, 0.5, -1, -1], [0.4, 0.3, 0.2, 0.1]])
        members = np.tile(np.array([0.4, 0.3, 0.2, 0.1]), (3, 3, 1))
        members[0, 1] = [0.3, 0.4, 0.2, 0.1]
        members[:, 2] = [[0.1, 0.2, 0.3, 0.4], [0.1, 0.4, 0.3, 0.2], [0.4, 0.3, 0.2, 0.1]]
        monkeypatch.setattr(uncertainty, "member_attributions", lambda ens, X, threads=1: members)
        res = uncertainty_correlation_benchmark(None, {3: _Stub(g)}, np.zeros((3, 4)), g, ZERO,
                                                top_fraction=0.99, truth=truth)
        assert res.z_by_M[3][0] is None
        assert res.skipped[3]["too_few_features"] == 1
        # two features give |rho| = 1 or a constant width vector; never a finite z
        assert res.skipped[3].get("degenerate_correlation", 0) + res.skipped[3].get("constant_input", 0) == 1
        assert res.z_by_M[3][2] is not None

    def test_all_skipped_raises(self, monkeypatch):
        g = identity_grouping(3)
        monkeypatch.setattr(uncertainty, "member_attributions", lambda ens, X, threads=1: np.ones((2, 2, 3)) / 3)
        with pytest.raises(EmptyBenchmarkError):
            uncertainty_correlation_benchmark(None, {2: _Stub(g)}, np.zeros((2, 3)), g, ZERO,
                                              truth=np.zeros((2, 3)))


class TestReport:
    def test_write(self, tmp_path):
        EvalReport({"a": [1.0, None], "b": [0.5, 2.0]}, {"x": 1}).write(tmp_path, "r")
        rows = list(csv.reader(open(tmp_path / "r_per_image.csv")))
        assert rows == [["image", "a", "b"], ["0", "1.0", "0.5"], ["1", "", "2.0"]]
        assert json.loads((tmp_path / "r_summary.json").read_text()) == {"x": 1}


def test_extractor_single_output():
    assert predicted_class_probability([0.3], np.array([[0.3], [0.6]])).tolist() == [0.3, 0.6]
