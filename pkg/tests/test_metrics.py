import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epidhgnn.metrics import (
    MetricReport,
    auroc,
    contact_quantiles,
    f1,
    hit_at_k,
    mrr,
    population_curve,
    quantile_contact_report,
)


def brute_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def brute_ranks(scores):
    order = sorted(range(len(scores)), key=lambda v: (-scores[v], v))
    return {v: r + 1 for r, v in enumerate(order)}


def test_mrr_examples():
    assert mrr([0.9, 0.1, 0.2], [0]) == 1.0
    assert mrr([0.1, 0.9, 0.5], [2]) == 0.5
    assert mrr([0.9, 0.8, 0.7, 0.6, 0.5], [0, 3]) == pytest.approx(0.625)
    with pytest.raises(ValueError):
        mrr([0.1, 0.2], [])


def test_mrr_ties_break_by_id():
    assert mrr([0.5, 0.5, 0.5], [1]) == 0.5
    assert mrr([0.5, 0.5, 0.5], [0]) == 1.0


def test_hit_at_k_examples():
    assert hit_at_k([0.9, 0.1], [0], 1) == 1.0
    assert hit_at_k([0.9, 0.8, 0.7, 0.6], [3], 3) == 0.0
    assert hit_at_k([0.9, 0.8, 0.7, 0.6, 0.5], [1, 4], 3) == 0.5
    with pytest.raises(ValueError):
        hit_at_k([0.1], [0], 0)


def test_f1_examples():
    assert f1([0.9, 0.1, 0.8], [1, 0, 1]) == 1.0
    assert f1([0.1, 0.1, 0.2], [1, 0, 1]) == 0.0
    # TP=2, FP=1, FN=1
    assert f1([0.9, 0.8, 0.7, 0.1], [1, 1, 0, 1]) == pytest.approx(2 / 3)


def test_auroc_examples():
    assert auroc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert auroc([0.3] * 5, [1, 0, 1, 0, 0]) == 0.5
    assert auroc([0.9, 0.4, 0.6], [1, 0, 1]) == brute_auroc([0.9, 0.4, 0.6], [1, 0, 1]) == 1.0
    with pytest.raises(ValueError):
        auroc([0.1, 0.2], [1, 1])


@settings(max_examples=200)
@given(st.lists(st.tuples(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]) | st.floats(0, 1), st.booleans()),
                min_size=2, max_size=100))
def test_auroc_matches_pairwise_enumeration(data):
    scores, labels = map(list, zip(*data))
    if all(labels) or not any(labels):
        return
    assert auroc(scores, labels) == pytest.approx(brute_auroc(scores, labels), abs=1e-12)


@settings(max_examples=200)
@given(st.lists(st.sampled_from([0.1, 0.2, 0.3]) | st.floats(-5, 5), min_size=1, max_size=40), st.data())
def test_ranking_metrics_match_full_sort(scores, data):
    n = len(scores)
    sources = data.draw(st.sets(st.integers(0, n - 1), min_size=1))
    k = data.draw(st.integers(1, n + 1))
    ranks = brute_ranks(scores)
    assert mrr(scores, sorted(sources)) == pytest.approx(np.mean([1 / ranks[s] for s in sources]))
    assert hit_at_k(scores, sorted(sources), k) == pytest.approx(np.mean([ranks[s] <= k for s in sources]))


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=60),
       st.floats(0.05, 0.95))
def test_f1_matches_confusion_loop(data, threshold):
    scores, labels = zip(*data)
    tp = fp = fn = 0
    for s, y in data:
        pred = s >= threshold
        tp += pred and y
        fp += pred and not y
        fn += (not pred) and y
    expected = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
    assert f1(scores, labels, threshold) == pytest.approx(expected)


def test_cubing_invariance(rng):
    for _ in range(50):
        s = rng.normal(size=30)
        y = rng.random(30) < 0.3
        y[:2] = [True, False]
        src = np.flatnonzero(y)
        assert auroc(s**3, y) == auroc(s, y)
        assert mrr(s**3, src) == mrr(s, src)
        assert hit_at_k(s**3, src, 5) == hit_at_k(s, src, 5)


def test_quantiles_distinct_counts():
    q = contact_quantiles(np.array([5, 1, 8, 3, 7, 2, 6, 4]))
    np.testing.assert_array_equal(np.bincount(q)[1:], [2, 2, 2, 2])
    np.testing.assert_array_equal(q, [3, 1, 4, 2, 4, 1, 3, 2])


def test_quantiles_all_tied_warns():
    counts = np.full(6, 10)
    with pytest.warns(UserWarning, match="empty"):
        rep = quantile_contact_report(counts, [0.9, 0.2], [1, 0], [0, 5])
    assert rep.rows[0].locations == list(range(6))
    assert all(not r.locations for r in rep.rows[1:])


def test_quantile_report_fallback_for_few_locations():
    with pytest.warns(UserWarning, match="single bucket"):
        rep = quantile_contact_report([3, 1, 2], [0.9, 0.2, 0.7], [1, 0, 0], [0, 1, 2])
    assert len(rep.rows) == 1
    assert rep.rows[0].f1 == rep.overall_f1


def test_quantile_report_matches_filtered_f1(rng):
    counts = rng.permutation(np.arange(10, 130, 10))
    locs = rng.integers(0, 12, size=300)
    scores, labels = rng.random(300), rng.random(300) < 0.5
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = quantile_contact_report(counts, scores, labels, locs)
    quant = contact_quantiles(counts)
    for row in rep.rows:
        sel = np.isin(locs, np.flatnonzero(quant == row.quantile))
        assert row.f1 == f1(scores[sel], labels[sel])
        assert row.num_pairs == sel.sum()
    assert rep.overall_f1 == f1(scores, labels)
    assert rep.to_dict()["quantiles"][0]["range"] == [10, 30]


def test_population_curve_examples(rng):
    truth = rng.random((4, 20)) < 0.3
    perfect = population_curve(truth.astype(float), truth, last_observed_count=5)
    assert perfect.mae == 0.0
    flat = np.zeros((5, 10), dtype=bool)
    flat[:, :3] = True
    assert population_curve(np.zeros((5, 10)), flat, last_observed_count=3).naive_mae == 0.0


def test_population_curve_hand_computed():
    probs = np.array([[0.5, 0.5, 0.0], [1.0, 0.5, 0.5]])
    truth = np.array([[1, 0, 0], [1, 1, 1]], dtype=bool)
    c = population_curve(probs, truth, last_observed_count=1, steps=[6, 7])
    np.testing.assert_allclose(c.predicted, [1.0, 2.0])
    assert c.mae == pytest.approx((0.0 + 1.0) / 2)
    assert c.naive_mae == pytest.approx((0 + 2) / 2)
    assert c.rows() == [(6, 1.0, 1.0), (7, 2.0, 3.0)]
    broadcast = population_curve(np.array([0.2, 0.4, 0.4]), truth, 1)
    np.testing.assert_allclose(broadcast.predicted, [1.0, 1.0])
    with pytest.raises(ValueError):
        population_curve(probs, np.zeros((0, 3), dtype=bool), 0)


def test_metric_report_population_std():
    rep = MetricReport("detect", {"tsh": 5, "ks": 20, "ps": 20})
    rep.add(0, {"mrr": 0.2})
    rep.add(1, {"mrr": 0.4})
    summary = rep.to_dict()
    assert summary["seeds"] == [0, 1]
    assert summary["metrics"]["mrr"]["mean"] == pytest.approx(0.3)
    assert summary["metrics"]["mrr"]["std"] == pytest.approx(0.1)
