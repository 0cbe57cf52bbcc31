import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mitorbr.errors import EmptyClass, LengthMismatch, UndefinedMetric, EmptyInput
from mitorbr.metrics import (
    ConfusionCounts,
    FocalLossParams,
    balanced_accuracy,
    balanced_accuracy_from_rates,
    class_weights,
    confusion,
    evaluate,
    focal_loss,
    roc_auc,
)
from mitorbr.scores import ClassScore, Label

A, N = Label.AMF, Label.NMF
labels = st.sampled_from([A, N])


def brute_auc(scores, truth):
    pos = [s for s, t in zip(scores, truth) if t is A]
    neg = [s for s, t in zip(scores, truth) if t is N]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_confusion_example():
    c = confusion([A, A, N, N, A], [A, N, N, A, A])
    assert c == ConfusionCounts(tp=2, fp=1, tn=1, fn=1)


def test_confusion_brute_force_length_8():
    for truth in itertools.product([A, N], repeat=4):
        for pred in itertools.product([A, N], repeat=4):
            t, p = truth * 2, pred * 2
            c = confusion(t, p)
            assert c.total == 8
            assert c.tp == sum(a is A and b is A for a, b in zip(t, p))
            assert c.tn == sum(a is N and b is N for a, b in zip(t, p))


def test_counts_to_rates():
    ba, sens, spec = balanced_accuracy(ConfusionCounts(tp=132, fp=68, tn=206, fn=10))
    assert sens == pytest.approx(100 * 132 / 142)
    assert spec == pytest.approx(100 * 206 / 274)
    assert ba == pytest.approx((sens + spec) / 2)


@pytest.mark.parametrize("sens,spec,ba", [(92.96, 75.09, 84.025), (85.92, 80.97, 83.445)])
def test_reported_table_consistency(sens, spec, ba):
    assert balanced_accuracy_from_rates(sens, spec) == pytest.approx(ba, abs=1e-9)


def test_rates_need_both_classes():
    with pytest.raises(UndefinedMetric):
        balanced_accuracy(ConfusionCounts(tp=3, fn=1))


def test_length_and_empty_checks():
    with pytest.raises(LengthMismatch):
        confusion([A], [A, N])
    with pytest.raises(EmptyInput):
        roc_auc([], [])


def test_auc_example():
    assert roc_auc([0.9, 0.4, 0.6, 0.1], [A, A, N, N]) == 0.75


def test_auc_ties_count_half():
    assert roc_auc([0.5, 0.5], [A, N]) == 0.5


def test_auc_single_class():
    with pytest.raises(UndefinedMetric):
        roc_auc([0.1, 0.2], [A, A])


@given(st.lists(st.tuples(st.sampled_from([0.0, 0.1, 0.5, 0.7, 1.0]) | st.floats(0, 1), labels), min_size=2, max_size=30))
def test_auc_matches_pair_counting(rows):
    scores, truth = zip(*rows)
    if len(set(truth)) < 2:
        return
    assert roc_auc(scores, truth) == pytest.approx(brute_auc(scores, truth), abs=1e-12)


@given(st.lists(st.tuples(st.floats(0.01, 0.99), labels), min_size=2, max_size=30))
def test_auc_invariant_to_monotone_transform(rows):
    scores, truth = zip(*rows)
    if len(set(truth)) < 2:
        return
    warped = [math.log(s / (1 - s)) for s in scores]
    assert roc_auc(warped, truth) == pytest.approx(roc_auc(scores, truth), abs=1e-12)


@given(st.lists(st.tuples(labels, labels), min_size=2, max_size=40))
def test_ba_symmetric_under_class_swap(rows):
    truth, pred = map(list, zip(*rows))
    if len(set(truth)) < 2:
        return
    flip = {A: N, N: A}
    ba, sens, spec = balanced_accuracy(confusion(truth, pred))
    ba2, sens2, spec2 = balanced_accuracy(confusion([flip[t] for t in truth], [flip[p] for p in pred]))
    assert ba == pytest.approx(ba2) and sens == pytest.approx(spec2) and spec == pytest.approx(sens2)


def test_evaluate_report():
    r = evaluate([A, A, N, N], [A, N, N, N], [0.9, 0.4, 0.6, 0.1])
    assert (r.sensitivity, r.specificity, r.balanced_accuracy, r.auc) == (50.0, 100.0, 75.0, 0.75)
    assert "AUC                 75.00" in r.table()


# ---------------------------------------------------------------- training formulas


def test_class_weights_examples():
    assert class_weights([150, 50]) == pytest.approx((200 / 300, 2.0))
    assert class_weights([1, 999]) == pytest.approx((500.0, 0.5005005005), rel=1e-9)
    with pytest.raises(EmptyClass):
        class_weights([0, 10])


@given(st.lists(st.integers(1, 10_000), min_size=2, max_size=5))
def test_class_weights_preserve_total(counts):
    w = class_weights(counts)
    assert sum(wi * n for wi, n in zip(w, counts)) == pytest.approx(sum(counts))


def test_focal_loss_example():
    loss = focal_loss([ClassScore(0.5, 0.5)], [A], FocalLossParams((1.0, 1.0), 2.0))
    assert loss == pytest.approx(0.25 * math.log(2), rel=1e-12)


def test_focal_loss_floor():
    loss = focal_loss([ClassScore(1.0, 0.0)], [A], FocalLossParams((1.0, 1.0), 0.0))
    assert loss == pytest.approx(-math.log(1e-12))


@given(st.lists(st.tuples(st.floats(0, 1), labels), min_size=1, max_size=20),
       st.floats(0.1, 5), st.floats(0.1, 5))
def test_gamma_zero_is_weighted_cross_entropy(rows, a0, a1):
    probs = [ClassScore.from_nmf(p) for p, _ in rows]
    truth = [t for _, t in rows]
    ce = np.mean([-(a1 if t is A else a0) * math.log(max(s.p_amf if t is A else s.p_nmf, 1e-12))
                  for s, t in zip(probs, truth)])
    assert focal_loss(probs, truth, FocalLossParams((a0, a1), 0.0)) == pytest.approx(ce, rel=1e-9)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 5))
def test_focal_loss_nonincreasing_in_true_class_probability(p, q, gamma):
    lo, hi = sorted([p, q])
    f = lambda x: focal_loss([ClassScore.from_nmf(1 - x)], [A], FocalLossParams(gamma=gamma))
    assert f(hi) <= f(lo) + 1e-12


def test_focal_params_validation():
    with pytest.raises(ValueError):
        FocalLossParams((1.0, -1.0))
    with pytest.raises(ValueError):
        FocalLossParams(gamma=-0.5)
