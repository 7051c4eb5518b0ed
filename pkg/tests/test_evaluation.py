import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcvad.errors import ComparisonError, InvalidInputError, UndefinedAUCError
from dcvad.evaluation import LabeledScores, compare_runs, micro_auc, roc_curve
from dcvad.scores import FrameScoreSeries


def pairwise_auc(scores, labels):
    """O(n^2) Mann-Whitney count, exact in rationals."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    twice = sum(2 if p > n else 1 if p == n else 0 for p in pos for n in neg)
    return twice / (2 * len(pos) * len(neg))


def L(s, y):
    return LabeledScores(np.array(s, dtype=float), np.array(y))


def test_perfect_and_tied():
    assert micro_auc(L([0.9, 0.1], [1, 0])) == 1.0
    assert micro_auc(L([0.5] * 6, [1, 0, 1, 0, 0, 1])) == 0.5


def test_matches_pairwise_oracle_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = 200
        s = rng.normal(size=n).round(1)  # rounding forces ties
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        assert abs(micro_auc(L(s, y)) - pairwise_auc(s, y)) < 1e-12


def test_single_class_is_undefined():
    with pytest.raises(UndefinedAUCError):
        micro_auc(L([0.1, 0.2], [1, 1]))
    with pytest.raises(UndefinedAUCError):
        roc_curve(L([0.1, 0.2], [0, 0]))


def test_labeled_scores_validation():
    with pytest.raises(InvalidInputError):
        L([0.1, 0.2], [1])
    with pytest.raises(InvalidInputError):
        L([0.1, 0.2], [1, 2])
    with pytest.raises(InvalidInputError):
        L([0.1, float("nan")], [1, 0])


def test_roc_examples():
    c = roc_curve(L([0.9, 0.1], [1, 0]))
    assert list(zip(c.fpr, c.tpr)) == [(0, 0), (0, 1), (1, 1)]
    assert c.auc == 1.0
    assert roc_curve(L([0.9, 0.1], [0, 1])).auc == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 300), st.integers(0, 2**32 - 1), st.integers(1, 20))
def test_roc_properties(n, seed, levels):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, levels, n).astype(float)
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    ls = L(s, y)
    c = roc_curve(ls)
    assert (c.fpr[0], c.tpr[0]) == (0, 0) and (c.fpr[-1], c.tpr[-1]) == (1, 1)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert len(c.fpr) == len(np.unique(s)) + 1
    trap = float(np.sum(np.diff(c.fpr) * (c.tpr[1:] + c.tpr[:-1]) / 2))
    assert abs(trap - micro_auc(ls)) < 1e-12
    assert abs(c.auc - micro_auc(ls)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 200), st.integers(0, 2**32 - 1))
def test_auc_invariances(n, seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=n)
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    a = micro_auc(L(s, y))
    assert micro_auc(L(2 * s + 1, y)) == a
    assert micro_auc(L(np.exp(s), y)) == a
    assert abs(a + micro_auc(L(-s, y)) - 1) < 1e-12
    perm = rng.permutation(n)
    assert micro_auc(L(s[perm], y[perm])) == a


def test_video_order_does_not_matter():
    rng = np.random.default_rng(1)
    series = [FrameScoreSeries(f"v{i}", rng.normal(size=30)) for i in range(4)]
    labels = [rng.integers(0, 2, 30) for _ in range(4)]
    a = micro_auc(LabeledScores.from_series(series, labels))
    b = micro_auc(LabeledScores.from_series(series[::-1], labels[::-1]))
    assert a == b
    ls = LabeledScores.from_series(series, labels)
    assert ls.offsets == (("v0", 0), ("v1", 30), ("v2", 60), ("v3", 90))


def test_from_series_length_mismatch():
    with pytest.raises(InvalidInputError):
        LabeledScores.from_series([FrameScoreSeries("v", np.zeros(3))], [np.zeros(4)])


def test_compare_runs_ranking_and_formats():
    y = [1, 0, 1, 0]
    good, bad = L([0.9, 0.1, 0.8, 0.2], y), L([0.1, 0.9, 0.5, 0.6], y)
    rep = compare_runs([("bad", bad), ("good", good)])
    assert rep.best == "good" and [n for n, _ in rep.rows] == ["good", "bad"]
    assert rep.csv().splitlines()[:2] == ["rank,run,auc,best", "1,good,1.000000,1"]
    lines = rep.text().splitlines()
    assert lines[2].startswith("good") and lines[2].endswith("*")
    assert len({len(line) for line in lines[2:]}) <= 2  # aligned columns, star only on top


def test_compare_single_and_identical_runs():
    y = [1, 0, 0]
    assert len(compare_runs([("only", L([0.3, 0.2, 0.1], y))]).rows) == 1
    rep = compare_runs([("a", L([0.3, 0.2, 0.1], y)), ("b", L([0.3, 0.2, 0.1], y))])
    assert rep.rows[0][1] == rep.rows[1][1]


def test_compare_runs_label_mismatch():
    with pytest.raises(ComparisonError):
        compare_runs([("a", L([0.1, 0.2], [1, 0])), ("b", L([0.1, 0.2], [0, 1]))])
    with pytest.raises(ComparisonError):
        compare_runs([])
