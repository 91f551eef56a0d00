import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oscmode import metrics as mt
from oscmode.errors import DataError, ShapeError


def test_confusion_examples():
    cm = mt.confusion([0, 1, 2], [0, 1, 2], 3)
    assert cm.counts.tolist() == np.eye(3, dtype=int).tolist()
    assert mt.confusion([1], [0], 2).counts.tolist() == [[0, 1], [0, 0]]
    assert mt.confusion([0, 1, 1, 0], [1, 1, 0, 0], 2, names=["IP", "AP"]).to_dict()["names"] == ["IP", "AP"]
    with pytest.raises(DataError):
        mt.confusion([2], [0], 2)
    with pytest.raises(ShapeError):
        mt.confusion([0, 1], [0], 2)


def test_one_vs_rest_example():
    cm = mt.ConfusionMatrix(np.array([[9, 2], [1, 8]]), ("a", "b"))
    assert mt.one_vs_rest(cm, 1) == mt.BinaryCounts(TP=8, FP=2, TN=9, FN=1)
    diag = mt.confusion([0, 1, 2, 2], [0, 1, 2, 2], 3)
    for k in range(3):
        c = mt.one_vs_rest(diag, k)
        assert c.FP == c.FN == 0 and c.total == 4


def test_rates_example():
    r = mt.rates(mt.BinaryCounts(TP=8, FP=2, TN=9, FN=1))
    assert abs(r.AC - 0.85) <= 1e-12 and abs(r.PR - 0.8) <= 1e-12 and abs(r.RC - 8 / 9) <= 1e-12
    assert abs(r.F1 - 2 * 0.8 * (8 / 9) / (0.8 + 8 / 9)) <= 1e-12 and abs(r.F1 - 0.842105) < 1e-6
    assert abs(r.FAR - 2 / 11) <= 1e-12 and r.undefined == ()


def test_rates_perfect_and_undefined():
    assert mt.rates(mt.BinaryCounts(5, 0, 5, 0)).as_tuple() == (1.0, 1.0, 1.0, 1.0, 0.0)
    r = mt.rates(mt.BinaryCounts(0, 0, 4, 3))
    assert r.PR == 0.0 and "PR" in r.undefined and r.to_dict()["undefined"]


def test_auc_examples():
    assert mt.auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0
    assert mt.auc([0.8, 0.4, 0.6, 0.2], [1, 1, 0, 0]) == 0.75
    assert mt.auc([0.5, 0.5], [1, 0]) == 0.5
    with pytest.raises(DataError):
        mt.auc([0.1, 0.2], [1, 1])


def test_gms_and_macro_examples():
    assert mt.gms([1, 1], [1, 1], [1, 1]) == 1.0
    assert mt.gms([1, 0], [1, 0], [1, 0]) == 0.0
    assert mt.gms([0.5], [0.5], [0.5]) == 0.125
    assert mt.gms([0.5], [0.5], [0.5], root="factors") == pytest.approx(0.5, abs=1e-15)
    assert mt.macro([1, 1]) == 1 and mt.macro([1, 0]) == 0.5
    with pytest.raises(DataError):
        mt.gms([1], [1], [1], root="bogus")


def pairwise_auc(scores, pos):
    p = [s for s, f in zip(scores, pos) if f]
    n = [s for s, f in zip(scores, pos) if not f]
    return sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(p, n)) / (len(p) * len(n))


scored = st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=25).filter(
    lambda xs: 0 < sum(f for _, f in xs) < len(xs))


@given(scored)
def test_auc_properties(xs):
    s = np.array([v for v, _ in xs], dtype=float)
    pos = np.array([f for _, f in xs])
    a = mt.auc(s, pos)
    assert a == pytest.approx(pairwise_auc(s, pos), abs=1e-12)
    assert mt.auc(-s, pos) == pytest.approx(1 - a, abs=1e-12)
    assert mt.auc(np.exp(s / 3) * 2 + 1, pos) == pytest.approx(a, abs=1e-12)


labels3 = st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=40)


@given(labels3)
def test_rates_and_gms_properties(pairs):
    pred = [p for p, _ in pairs]
    truth = [t for _, t in pairs]
    rep = mt.evaluate(pred, truth, 3)
    assert rep.confusion.total == len(pairs)
    for r in rep.per_class.values():
        assert all(0.0 <= v <= 1.0 for v in r.as_tuple())
    factors = [v for r in rep.per_class.values() for v in (r.PR, r.RC, r.F1)]
    pr = [r.PR for r in rep.per_class.values()]
    rc = [r.RC for r in rep.per_class.values()]
    f1 = [r.F1 for r in rep.per_class.values()]
    by_factor = mt.gms(pr, rc, f1, root="factors")
    assert rep.GMS <= by_factor + 1e-12
    assert by_factor <= np.mean(factors) + 1e-12
    assert rep.accuracy == pytest.approx(np.mean(np.array(pred) == np.array(truth)))


def test_evaluate_binary_and_multiclass_auc():
    truth = [0, 0, 1, 1]
    scores = np.array([[0.2, 0.8], [0.6, 0.4], [0.4, 0.6], [0.8, 0.2]])
    rep = mt.evaluate([1, 0, 1, 0], truth, 2, names=["IP", "AP"], scores=scores)
    assert rep.AUC == 0.25  # positives {0.6, 0.2} vs negatives {0.8, 0.4}: one win in four
    d = rep.to_dict()
    assert set(d) >= {"per_class", "macro", "GMS", "GMS_note", "AUC", "confusion", "accuracy"}
    assert set(d["per_class"]) == {"IP", "AP"}
    eye = np.eye(3)[[0, 1, 2, 2]]
    rep3 = mt.evaluate([0, 1, 2, 2], [0, 1, 2, 2], 3, scores=eye)
    assert rep3.AUC == {"per_class": [1.0, 1.0, 1.0], "macro": 1.0}
    assert rep3.macro["FAR"] == 0.0 and rep3.GMS == 1.0
    with pytest.raises(ShapeError):
        mt.evaluate([0], [0], 2, scores=np.zeros((1, 3)))


@given(st.lists(st.floats(0, 1), min_size=1, max_size=6))
def test_gms_below_macro_when_factors_agree(f):
    # PR = RC = F1 per class: the geometric aggregate never exceeds the arithmetic mean
    assert mt.gms(f, f, f) <= mt.macro(f) + 1e-12
    assert mt.gms(f, f, f, root="factors") <= mt.macro(f) + 1e-12
