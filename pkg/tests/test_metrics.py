import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from deepfake_vit.errors import ContractError, UndefinedMetricError
from deepfake_vit.metrics import (EvalRecord, confusion_and_f1, confusion_counts, export_correlation,
                                  f1_score, log_loss, make_records, pearson, roc_auc, roc_curve)


def pair_count_auc(labels, scores):
    pos = [s for y, s in zip(labels, scores) if y == 1]
    neg = [s for y, s in zip(labels, scores) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def direct_log_loss(labels, probs, eps=1e-7):
    total = 0.0
    for y, p in zip(labels, probs):
        p = min(max(p, eps), 1 - eps)
        total += y * math.log(p) + (1 - y) * math.log(1 - p)
    return -total / len(labels)


# -------------------------------------------------------------------- log loss

def test_log_loss_ln2():
    assert log_loss([EvalRecord(1, 0.5)]) == math.log(2)


def test_log_loss_perfect_is_clamp_floor():
    loss = log_loss(make_records([1, 0, 1], [1.0, 0.0, 1.0]))
    assert loss == pytest.approx(-math.log(1 - 1e-7), rel=1e-9)
    assert 0 < loss < 1.1e-7


def test_log_loss_direct_sum():
    y, p = [1, 0, 1, 0], [0.9, 0.2, 0.35, 0.6]
    assert abs(log_loss(make_records(y, p)) - direct_log_loss(y, p)) < 1e-12


def test_log_loss_empty():
    with pytest.raises(ContractError):
        log_loss([])


def test_log_loss_minimized_at_empirical_rate():
    y = [1, 1, 1, 0, 0, 0, 0, 0, 1, 0]
    grid = np.linspace(0.01, 0.99, 99)
    losses = [log_loss(make_records(y, [c] * len(y))) for c in grid]
    assert grid[int(np.argmin(losses))] == pytest.approx(np.mean(y))


# ------------------------------------------------------------------------- auc

def test_auc_trivial_cases():
    assert roc_auc(make_records([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9])) == 1.0
    assert roc_auc(make_records([0, 1, 0, 1], [0.4] * 4)) == 0.5
    with pytest.raises(UndefinedMetricError):
        roc_auc(make_records([1, 1], [0.2, 0.3]))


def test_auc_one_inversion():
    y, s = [0, 0, 0, 1, 1, 1], [0.1, 0.2, 0.7, 0.6, 0.8, 0.9]
    assert roc_auc(make_records(y, s)) == pair_count_auc(y, s) == 8 / 9


def test_auc_exhaustive_small_sets():
    grid = (0.0, 0.25, 0.5, 1.0)
    for n in range(2, 9):
        rng = np.random.default_rng(n)
        for labels in itertools.product((0, 1), repeat=n):
            if 0 < sum(labels) < n:
                scores = rng.choice(grid, size=n)
                assert roc_auc(make_records(labels, scores)) == pytest.approx(pair_count_auc(labels, scores),
                                                                              abs=1e-15)


def test_auc_equals_trapezoid_area():
    rng = np.random.default_rng(3)
    y, s = rng.integers(0, 2, 60), np.round(rng.uniform(size=60), 1)
    pts = roc_curve(make_records(y, s))
    fpr, tpr = [p[1] for p in pts], [p[2] for p in pts]
    assert trapezoid(tpr, fpr) == pytest.approx(roc_auc(make_records(y, s)), abs=1e-12)
    assert pts[-1][1:] == (1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0.01, 0.99)), min_size=2, max_size=30))
def test_auc_rank_invariances(pairs):
    y = [p[0] for p in pairs]
    s = np.array([p[1] for p in pairs])
    if 0 < sum(y) < len(y):
        auc = roc_auc(make_records(y, s))
        assert roc_auc(make_records(y, s ** 3)) == pytest.approx(auc, abs=1e-12)
        flipped = make_records([1 - v for v in y], 1 - s)
        assert roc_auc(flipped) == pytest.approx(auc, abs=1e-12)


# ---------------------------------------------------------------- confusion/f1

def test_all_correct_balanced():
    rep = confusion_and_f1(make_records([1] * 5 + [0] * 5, [0.9] * 5 + [0.1] * 5))
    assert rep.f1 == 100.0 and rep.fn == 0 and rep.threshold == 0.55


def test_threshold_boundary_is_fake():
    assert confusion_counts([EvalRecord(1, 0.55)])["tp"] == 1
    assert confusion_counts([EvalRecord(0, 0.55)])["fp"] == 1


def test_f1_hand_arithmetic():
    assert f1_score(3, 1, 1) == (75.0, False)
    assert f1_score(0, 0, 0) == (0.0, True)
    rep = confusion_and_f1(make_records([0, 0, 0], [0.1, 0.2, 0.3]))
    assert rep.f1 == 0.0 and rep.f1_degenerate


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1)), min_size=1, max_size=40))
def test_counts_sum_and_threshold_monotone(pairs):
    recs = make_records([p[0] for p in pairs], [p[1] for p in pairs])
    prev_tp = None
    for t in np.linspace(0.95, 0.05, 19):
        c = confusion_counts(recs, t)
        assert sum(c.values()) == len(recs)
        if prev_tp is not None:
            assert c["tp"] >= prev_tp
        prev_tp = c["tp"]


def test_report_serialization():
    rep = confusion_and_f1(make_records([1, 0, 1, 0], [0.7, 0.2, 0.4, 0.6]))
    assert '"auc": 0.75' in rep.to_json()
    assert rep.to_csv().splitlines()[0] == "metric,value"


# ----------------------------------------------------------------- correlation

def test_correlation_identity_and_negation():
    a = make_records([1, 0, 1, 0], [0.9, 0.1, 0.7, 0.2])
    assert export_correlation(a, a).pearson == pytest.approx(1.0)
    b = make_records([1, 0, 1, 0], [0.1, 0.9, 0.3, 0.8])
    assert export_correlation(a, b).pearson == pytest.approx(-1.0)


def test_pearson_direct_formula():
    x = np.array([0.1, 0.4, 0.35, 0.8, 0.6])
    y = np.array([0.2, 0.5, 0.3, 0.9, 0.4])
    dx, dy = x - x.mean(), y - y.mean()
    assert abs(pearson(x, y) - (dx @ dy) / math.sqrt((dx @ dx) * (dy @ dy))) < 1e-12


def test_correlation_matches_by_id_and_rejects_mismatch():
    a = make_records([1, 0, 1], [0.9, 0.1, 0.6], ids=["x", "y", "z"])
    b = make_records([1, 1, 0], [0.6, 0.8, 0.2], ids=["z", "x", "y"])
    corr = export_correlation(a, b)
    assert [r[0] for r in corr.rows] == ["x", "y", "z"]
    assert corr.rows[0][1:] == (0.9, 0.8)
    assert len(corr.to_csv().splitlines()) == 4
    with pytest.raises(ContractError):
        export_correlation(a, make_records([1, 0], [0.5, 0.5], ids=["x", "y"]))
