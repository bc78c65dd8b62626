import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from east.errors import NoPositives, SingleClass
from east.metrics import average_precision, class_f1, evaluate, macro_f1, roc_auc
from east.oracles import average_precision_naive, f1_confusion_naive, roc_auc_naive


def test_average_precision_examples():
    assert average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == 5 / 6
    assert average_precision([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    with pytest.raises(NoPositives):
        average_precision([0.3, 0.2], [0, 0])


def test_average_precision_ties_follow_index():
    # tie: the earlier index ranks first
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0
    assert average_precision([0.5, 0.5], [0, 1]) == 0.5


def test_roc_auc_examples():
    assert roc_auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert roc_auc([0.3, 0.3, 0.3, 0.3], [1, 0, 1, 0]) == 0.5
    assert roc_auc([0.8, 0.6, 0.4], [1, 0, 1]) == 0.5
    with pytest.raises(SingleClass):
        roc_auc([0.1, 0.2], [1, 1])


def test_f1_examples():
    y = np.array([[1, 0], [0, 1], [1, 1], [0, 0]])
    assert macro_f1(y.astype(float), y) == 1.0
    assert class_f1(np.full(4, 0.5), [1, 0, 1, 0], 0.4) == pytest.approx(0.5 * (2 * 2 / (4 + 2)))


def test_f1_two_class_hand_case():
    labels = np.array([[1, 0], [1, 1], [0, 1], [0, 0]])
    scores = np.array([[0.9, 0.1], [0.3, 0.8], [0.2, 0.7], [0.1, 0.6]])
    # class 0: one false negative (0.3); class 1: one false positive (0.6)
    # class 0: TP=1 FP=0 FN=1 TN=2 -> F1+ = 2/3, F1- = 4/5 ; class 1: TP=2 FP=1 FN=0 TN=1 -> 4/5, 2/3
    expected = ((2 / 3 + 4 / 5) / 2 + (4 / 5 + 2 / 3) / 2) / 2
    assert macro_f1(scores, labels) == pytest.approx(expected, abs=1e-15)
    naive = np.mean([f1_confusion_naive(list(scores[:, k] > 0.4), list(labels[:, k])) for k in range(2)])
    assert macro_f1(scores, labels) == pytest.approx(naive, abs=1e-15)


def test_f1_uses_mask_and_strict_threshold():
    scores = np.array([[0.4], [0.9], [0.1]])
    labels = np.array([[1], [1], [0]])
    mask = np.array([[1], [1], [1]])
    # 0.4 is not above the threshold
    assert macro_f1(scores, labels, mask) == pytest.approx(f1_confusion_naive([False, True, False], [1, 1, 0]))
    mask[0] = 0
    assert macro_f1(scores, labels, mask) == 1.0


@pytest.mark.parametrize("seed", range(30))
def test_ap_auc_against_oracles(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 200))
    scores = np.round(rng.random(n), int(rng.integers(1, 4)))  # include ties
    labels = rng.integers(0, 2, n)
    labels[0], labels[-1] = 1, 0
    assert abs(average_precision(scores, labels) - average_precision_naive(scores.tolist(), labels.tolist())) < 1e-12
    assert abs(roc_auc(scores, labels) - roc_auc_naive(scores.tolist(), labels.tolist())) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=2, max_size=60, unique=True), st.integers(0, 10_000))
def test_monotone_invariance(values, seed):
    labels = np.random.default_rng(seed).integers(0, 2, len(values))
    labels[0], labels[1] = 1, 0
    scores = np.array(values, dtype=float)
    transformed = np.exp(scores / 500.0) * 3 + 1
    assert average_precision(scores, labels) == average_precision(transformed, labels)
    assert roc_auc(scores, labels) == roc_auc(transformed, labels)


def test_evaluate_aggregates_are_means():
    rng = np.random.default_rng(1)
    scores = rng.random((50, 6))
    labels = rng.integers(0, 2, (50, 6))
    mask = (rng.random((50, 6)) < 0.8).astype(int)
    rep = evaluate(scores, labels, mask)
    assert abs(rep.mAP - np.mean([c.ap for c in rep.per_class])) < 1e-12
    assert abs(rep.macro_f1 - np.mean([c.f1 for c in rep.per_class])) < 1e-12
    assert abs(rep.roc_auc - np.mean([c.auc for c in rep.per_class])) < 1e-12
    for v in (rep.mAP, rep.macro_f1, rep.roc_auc):
        assert 0 <= v <= 1
    keep = mask[:, 2] == 1
    assert rep.per_class[2].ap == average_precision(scores[keep, 2], labels[keep, 2])


def test_evaluate_skips_undefined_classes():
    scores = np.array([[0.9, 0.2], [0.1, 0.3]])
    labels = np.array([[1, 0], [0, 0]])
    rep = evaluate(scores, labels)
    assert rep.per_class[1].ap is None and rep.per_class[1].auc is None
    assert rep.mAP == 1.0
