from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from xsei.features import DEFAULT_POOL, GROUND_TRUTH, feature_matrix
from xsei.indicator import (DegenerateScore, EvalConfig, EvalData, ModelResult, SoftScore,
                            XseiReport, aggregate_regions, attainable_scores, ground_truth_regions,
                            mark_regions, score_feature_pool, score_regions, soft_evaluate,
                            top_k_features)
from xsei.signal import ArcMask

from conftest import make_window

POOL = list(DEFAULT_POOL)
SCORE_SET = {Fraction(0), Fraction(1, 9), Fraction(1, 4), Fraction(3, 7), Fraction(2, 3), Fraction(1)}


# --- ground truth ------------------------------------------------------------------------

def test_identical_pair_has_no_regions():
    x = np.sin(np.arange(100.0))
    assert not ground_truth_regions(x, x.copy(), n_regions=10).r.any()


def test_mask_covering_regions_3_to_5():
    flags = np.zeros(100, dtype=bool)
    flags[30:60] = True
    g = ground_truth_regions(ArcMask(flags), n_regions=10)
    assert np.flatnonzero(g.r).tolist() == [3, 4, 5] and g.derivation == "mask"
    win = make_window(np.ones(100), label=1, flags=flags)
    assert np.array_equal(ground_truth_regions(win, n_regions=10).r, g.r)


def test_pairwise_below_tolerance_is_empty():
    x = np.zeros(200)
    xh = x + np.linspace(-1, 1, 200) * 0.9e-6      # max deviation 0.9e-6
    assert not ground_truth_regions(x, xh, 20, tolerance=1e-6).r.any()
    xh[57] = 5e-6
    assert np.flatnonzero(ground_truth_regions(x, xh, 20, tolerance=1e-6).r).tolist() == [5]


def test_pairwise_misaligned():
    with pytest.raises(ValueError, match="misaligned"):
        ground_truth_regions(np.zeros(10), np.zeros(11), 2)


# --- top-k -------------------------------------------------------------------------------

def test_top_k_examples():
    phi = np.array([5, 4, 3, 2, 1, .5, .4, .3, .2, .1, .05, .01])
    assert top_k_features([phi], POOL) == tuple(POOL[:5])
    assert top_k_features([[-10.0, 9.0]], ["a", "b"], k=1) == ("a",)
    assert top_k_features([[2.0, 0.0], [0.0, 2.0]], ["a", "b"], k=1) == ("a",)


def test_top_k_errors():
    with pytest.raises(ValueError):
        top_k_features([], POOL)
    with pytest.raises(ValueError):
        top_k_features([[1.0, 2.0]], ["a", "b"], k=3)


# --- score algebra -----------------------------------------------------------------------

def test_feature_score_examples():
    s = set(GROUND_TRUTH)
    assert score_feature_pool(s, s).value == 1.0
    others = [n for n in POOL if n not in s][:5]
    disjoint = score_feature_pool(s, others)
    assert disjoint.value == 0.0 and disjoint.denominator == 10
    four = list(GROUND_TRUTH[:4]) + others[:1]
    assert score_feature_pool(s, four).fraction == Fraction(2, 3)
    assert round(score_feature_pool(s, four).value, 2) == 0.67


def test_exhaustive_top5_scores_are_the_enumerable_set():
    seen = {score_feature_pool(GROUND_TRUTH, sel).fraction for sel in combinations(POOL, 5)}
    assert seen == SCORE_SET == attainable_scores(5, 5)
    assert Fraction(2, 3) in seen and round(float(Fraction(3, 7)), 2) == 0.43


def test_region_score_examples():
    assert score_regions([1, 0, 1, 0, 0], [1, 1, 0, 0, 0]).fraction == Fraction(1, 3)
    r = np.array([0, 1, 1, 0], dtype=bool)
    assert score_regions(r, r).value == 1.0
    assert score_regions(r, np.zeros(4, dtype=bool)).value == 0.0
    with pytest.raises(DegenerateScore):
        score_regions(np.zeros(4, bool), np.zeros(4, bool))
    with pytest.raises(ValueError):
        score_regions(np.zeros(4, bool), np.zeros(5, bool))


@pytest.mark.parametrize("n", [4, 10, 20])
def test_region_scores_stay_in_enumerable_set(n):
    for mask in range(1, 2 ** min(n, 10)):
        r = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        for shift in (0, 1, 3):
            occ = np.roll(r, shift)
            s = score_regions(r, occ)
            assert s.fraction in attainable_scores(int(r.sum()), int(occ.sum()))


def test_mark_regions_examples():
    assert not mark_regions(np.zeros(5)).any()
    assert mark_regions([0.9, 0.05, 0.5], 0.1).tolist() == [True, False, True]
    assert mark_regions([0.2, 0.0, -0.1, 1e-9], 0.0).tolist() == [True, False, False, True]
    with pytest.raises(ValueError):
        mark_regions([0.5], 1.5)


def test_soft_score_invariants():
    with pytest.raises(ValueError):
        SoftScore(0, 0, "occlusion")
    with pytest.raises(ValueError):
        SoftScore(3, 2, "occlusion")


bool_pair = st.integers(1, 30).flatmap(
    lambda n: st.tuples(st.lists(st.booleans(), min_size=n, max_size=n),
                        st.lists(st.booleans(), min_size=n, max_size=n)))


@given(bool_pair)
def test_region_score_symmetric_bounded_and_exact_at_equality(pair):
    a, b = (np.array(v, dtype=bool) for v in pair)
    if not (a | b).any():
        return
    s, t = score_regions(a, b), score_regions(b, a)
    assert s.fraction == t.fraction and 0 <= s.value <= 1
    assert (s.value == 1.0) == np.array_equal(a, b)


@given(st.sets(st.sampled_from(POOL), min_size=1), st.sets(st.sampled_from(POOL), min_size=1))
def test_feature_score_symmetric(a, b):
    assert score_feature_pool(a, b).fraction == score_feature_pool(b, a).fraction
    assert (score_feature_pool(a, b).value == 1.0) == (a == b)


@given(st.integers(1, 12), st.integers(1, 12))
def test_score_monotone_in_overlap_at_fixed_union(u, extra):
    # with |union| fixed, more intersection never lowers the score
    values = [Fraction(i, u) for i in range(u + 1)]
    assert values == sorted(values)
    for i in range(u + 1):
        assert SoftScore(i, u, "occlusion").fraction == values[i]


# --- aggregation -------------------------------------------------------------------------

def test_pooled_aggregation_keeps_windows_apart():
    res = np.array([[0.5, 0.0, 0.0], [0.0, 0.0, 0.5]])
    truth = np.array([[1, 0, 0], [0, 0, 1]], dtype=bool)
    assert aggregate_regions(res, truth, 0.1, "pooled").value == 1.0
    # mean Res flags regions 0 and 2, majority truth flags both as well (ties count)
    assert aggregate_regions(res, truth, 0.1, "mean_res").value == 1.0
    with pytest.raises(DegenerateScore):
        aggregate_regions(np.zeros((0, 3)), np.zeros((0, 3), bool), 0.1)


def test_mean_res_aggregation_thresholds_the_average():
    res = np.array([[0.15, 0.0], [0.0, 0.0]])
    truth = np.array([[1, 0], [1, 0]], dtype=bool)
    assert aggregate_regions(res, truth, 0.1, "pooled").fraction == Fraction(1, 2)
    assert aggregate_regions(res, truth, 0.1, "mean_res").value == 0.0


# --- soft evaluation ---------------------------------------------------------------------

class VarianceOracle:
    """Probability of class 1 is a fixed logistic function of the variance feature."""

    family = "feature_pool"
    name = "oracle"

    def __init__(self, center):
        self.center = center

    def predict_proba(self, x):
        z = (np.atleast_2d(x)[:, POOL.index("variance")] - self.center) * 4.0
        p = 1 / (1 + np.exp(-z))
        return np.column_stack([1 - p, p])


class EdgeNet:
    """Raw-signal model driven by the energy of the first quarter of the window."""

    family = "raw_signal"
    name = "edge"

    def predict_proba(self, x):
        x = np.atleast_2d(x)
        e = np.mean(x[:, : x.shape[1] // 4] ** 2, axis=1)
        return np.column_stack([1 / (1 + e), e / (1 + e)])


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(4)
    windows, labels = [], []
    for i in range(24):
        label = i % 2
        x = rng.normal(size=400) * (1 + 1.5 * label)
        flags = np.zeros(400, dtype=bool)
        if label:
            flags[:100] = True
        windows.append(make_window(x, label, flags))
        labels.append(label)
    feats = feature_matrix(windows)
    return EvalData(feats, windows, np.array(labels), feats, DEFAULT_POOL)


def test_oracle_model_report(data):
    center = float(np.median(data.features[:, POOL.index("variance")]))
    report = soft_evaluate([("oracle", VarianceOracle(center))], data, EvalConfig(n_explain=8))
    assert len(report.rows) == 1 and len(report.scores()) == 1
    row = report.rows[0]
    assert "variance" in row.top_features
    assert row.score.value >= 1 / 9 and row.score.fraction in SCORE_SET
    assert row.accuracy > 0.9


def test_report_has_one_row_per_model_and_records_errors(data):
    cfg = EvalConfig(n_explain=4, n_occlusion=6, n_regions=8)
    center = float(np.median(data.features[:, POOL.index("variance")]))

    class Broken(VarianceOracle):
        family = "raw_signal"      # wrong family for the data it will get

        def predict_proba(self, x):
            raise RuntimeError("boom")

    models = [("oracle", VarianceOracle(center)), ("bad", Broken(0.0)), ("edge", EdgeNet())]
    report = soft_evaluate(models, data, cfg, {"snr_db": 5.0})
    assert [r.name for r in report.rows] == ["oracle", "bad", "edge"]
    assert report.rows[1].error.startswith("RuntimeError") and report.rows[1].score is None
    edge = report.rows[2]
    assert edge.score.method == "occlusion" and len(edge.mean_res) == 8 and edge.n_explained == 6
    # the edge model only looks at the first quarter, which is the arc region:
    # nothing outside it is ever flagged, so every marked region is a hit
    assert np.all(np.array(edge.mean_res[2:]) == 0.0) and min(edge.mean_res[:2]) > 0.1
    assert edge.score.value > 0.5
    assert report.axes == {"snr_db": 5.0} and report.provenance["n_regions"] == 8


def test_soft_evaluate_is_deterministic_and_serialisable(data):
    cfg = EvalConfig(n_explain=4, removal="random_sample", seed=11)
    center = float(np.median(data.features[:, POOL.index("variance")]))
    a = soft_evaluate([VarianceOracle(center)], data, cfg)
    b = soft_evaluate([VarianceOracle(center)], data, cfg)
    assert a.to_dict() == b.to_dict()
    again = XseiReport.from_dict(a.to_dict())
    assert again.to_dict() == a.to_dict()
    assert ModelResult.from_dict(a.rows[0].to_dict()).score == a.rows[0].score


def test_empty_model_list(data):
    assert soft_evaluate([], data).rows == []


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(removal="median")
    with pytest.raises(ValueError):
        EvalConfig(aggregation="max")
    with pytest.raises(ValueError):
        EvalConfig(threshold=-0.1)
    assert EvalConfig.from_dict({"ground_truth": ["rms"]}).ground_truth == ("rms",)
