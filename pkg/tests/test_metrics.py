import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sentinel.metrics import (ConfusionCounts, RobustnessReport, UndefinedRateWarning,
                              assemble_report, aut, confusion, f1, objective_j, pearson,
                              pearson_logits, tnr, tpr)

rate = st.floats(0.0, 1.0, allow_nan=False)


def test_confusion_examples():
    y = np.array([1, 0, 1, 0, 1])
    assert confusion(y, y) == ConfusionCounts(tp=3, tn=2)
    assert confusion(1 - y, y) == ConfusionCounts(fp=2, fn=3)
    assert confusion([], []) == ConfusionCounts()
    with pytest.raises(ValueError):
        confusion([1, 0], [1])
    with pytest.raises(ValueError):
        confusion([2, 0], [1, 0])


def test_rate_examples():
    assert tpr(ConfusionCounts(tp=75, fn=25)) == 0.75
    assert tnr(ConfusionCounts(tn=996, fp=4)) == 0.996
    with pytest.warns(UndefinedRateWarning):
        assert f1(ConfusionCounts()) == 0.0
    assert f1(ConfusionCounts(tp=2, fp=1, fn=1)) == pytest.approx(2 / 3)


def test_aut_examples():
    assert aut([1, 1, 1, 1]) == 1.0
    assert aut([1, 0, 1, 0]) == 0.5
    assert aut([0.8, 0.6]) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        aut([1.0])


def test_objective_j_examples():
    assert objective_j(1.0, 1.0, 1.0, 1.0, 1.0) == 1.0
    assert objective_j(0.95, 1.0, 1.0, 1.0, 1.0) == 0.0
    # penalty 0.025 / 0.05 = 0.5 and geometric mean of 0.0192 is 0.37224
    assert objective_j(0.975, 0.8, 0.4, 0.3, 0.2) == pytest.approx(0.5 * 0.0192 ** 0.25, abs=1e-12)
    assert objective_j(0.975, 0.8, 0.4, 0.3, 0.2) == pytest.approx(0.1861, abs=1e-4)
    assert objective_j(0.99, 0.9, 0.0, 0.5, 0.5) == 0.0
    with pytest.raises(ValueError):
        objective_j(1.1, 1, 1, 1, 1)


def test_pearson_examples(fitted_mlp, small_data):
    X = small_data.to_csr()
    assert pearson_logits(fitted_mlp, fitted_mlp, X) == pytest.approx(1.0)

    class Negated:
        def decision_function(self, X):
            return -fitted_mlp.decision_function(X)

    assert pearson_logits(fitted_mlp, Negated(), X) == pytest.approx(-1.0)
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [1])


@settings(max_examples=200)
@given(st.lists(rate, min_size=2, max_size=12), rate)
def test_aut_constant_and_monotone(scores, bump):
    c = scores[0]
    assert aut([c] * len(scores)) == pytest.approx(c)
    base = aut(scores)
    up = list(scores)
    up[len(up) // 2] = max(up[len(up) // 2], bump)
    assert aut(up) >= base - 1e-12
    assert 0.0 <= base <= 1.0


@settings(max_examples=200)
@given(rate, rate, rate, rate, rate, st.integers(1, 4), rate)
def test_objective_j_hinge_and_monotone(t, a, b, c, d, which, bump):
    vals = [a, b, c, d]
    if t <= 0.95:
        assert objective_j(t, *vals) == 0.0
    raised = list(vals)
    raised[which - 1] = max(raised[which - 1], bump)
    assert objective_j(t, *raised) >= objective_j(t, *vals) - 1e-12


@settings(max_examples=100)
@given(st.lists(st.floats(-50, 50), min_size=3, max_size=20), st.floats(0.1, 10),
       st.floats(-10, 10))
def test_pearson_affine_invariance(xs, scale, shift):
    a = np.array(xs)
    b = np.sin(a) + a
    if np.ptp(a) < 1e-3 or np.std(b) < 1e-3:
        return
    assert pearson(a, b) == pytest.approx(pearson(scale * a + shift, b), abs=1e-9)


@settings(max_examples=200)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_rates_in_unit_interval(tp, fp, tn, fn):
    counts = ConfusionCounts(tp, fp, tn, fn)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedRateWarning)
        assert all(0.0 <= r(counts) <= 1.0 for r in (tnr, tpr, f1))


def test_report_perfect_and_round_trip():
    y = np.array([0, 0, 1, 1])
    rep = assemble_report(y, y, {25: 0.5, 50: 0.5, 100: 0.25}, {"strong": 0.4},
                          round_f1=[1, 0.5], extra={"n_test": 4})
    assert rep.tnr == rep.tpr_clean == 1.0
    assert rep.j == pytest.approx(objective_j(1.0, 1.0, 0.5, 0.5, 0.25))
    assert rep.aut == 0.75
    back = RobustnessReport.from_json(rep.to_json())
    assert back == rep
    doc = json.loads(rep.to_json())
    assert {"tnr", "tpr_clean", "tpr_fsa", "j", "rho", "aut", "version"} <= set(doc)
    assert set(doc["tpr_fsa"]) == {"25", "50", "100"}
    assert "TPR 25-FSA" in rep.format_table()


def test_report_missing_budgets():
    y = np.array([0, 1])
    rep = assemble_report(y, y, {25: 1.0})
    assert rep.j is None
    doc = json.loads(rep.to_json())
    assert doc["tpr_fsa"]["50"] is None and doc["j"] is None
    assert RobustnessReport.from_json(rep.to_json()).tpr_fsa == {25: 1.0}


def test_report_rejects_bad_rates_and_format():
    with pytest.raises(ValueError):
        RobustnessReport(tnr=1.2, tpr_clean=0.5)
    with pytest.raises(ValueError):
        RobustnessReport.from_dict({"format": "other"})
    doc = RobustnessReport(1.0, 1.0).to_dict()
    doc["version"] = 99
    with pytest.raises(ValueError):
        RobustnessReport.from_dict(doc)
