import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.base import clone

from sentinel.anomaly import IsolationForestDetector
from sentinel.cascade import (Below, Cascade, Composite, EnsembleAverage, InlierGate,
                              ThresholdGE, build_deeptrust, build_multistep, condition_from_dict)

from cascade_oracle import make_pool, naive_evaluate, random_cascade


class Table:
    """Scores looked up by a row id encoded in the binary features."""

    def __init__(self, scores, dim=4):
        self.scores = np.asarray(scores, dtype=float)
        self.n_features_in_ = dim
        self.rows_scored = 0

    def _ids(self, X):
        dense = np.asarray(X.todense())
        return dense @ (2 ** np.arange(dense.shape[1]))

    def malware_score(self, X):
        self.rows_scored += X.shape[0]
        return self.scores[self._ids(X).astype(int)]


def id_matrix(n, dim=4):
    return sp.csr_matrix(np.array([[(i >> b) & 1 for b in range(dim)] for i in range(n)],
                                  dtype=float))


def test_first_firing_stage_decides():
    f1 = Table([0.9, 0.2, 0.2, 0.2])
    f2 = Table([0.1, 0.7, 0.3, 0.1])
    f3 = Table([0.0, 0.0, 0.0, 0.95])
    cas = Cascade([f1, f2, f3], (ThresholdGE(0, 0.8), ThresholdGE(1, 0.5)), 0.5).fit()
    res = cas.evaluate(id_matrix(4))
    assert res.stage.tolist() == [0, 1, 2, 2]
    assert res.score.tolist() == [0.9, 0.7, 0.0, 0.95]
    assert res.label.tolist() == [1, 1, 0, 1]


def test_later_detectors_are_lazy():
    f1, f2 = Table([0.9, 0.9]), Table([0.0, 0.0])
    cas = Cascade([f1, f2], (ThresholdGE(0, 0.5),)).fit()
    cas.evaluate(id_matrix(2))
    assert f2.rows_scored == 0


def test_aliased_slots_score_once():
    f1, f2 = Table([0.1, 0.2, 0.3]), Table([0.0, 0.0, 0.9])
    cas = Cascade([f1, f2, f1], (ThresholdGE(0, 0.8), ThresholdGE(1, 0.5))).fit()
    res = cas.evaluate(id_matrix(3))
    assert f1.rows_scored == 3
    assert res.stage.tolist() == [2, 2, 1]


def test_single_stage_and_threshold_boundary():
    cas = Cascade([Table([0.5, 0.49])], ()).fit()
    assert cas.predict(id_matrix(2)).tolist() == [1, 0]


def test_composite_short_circuit():
    f1 = Table([0.9, 0.1])
    cond = Composite("any", (ThresholdGE(0, 0.5), Below(0, 0.2)))
    cas = Cascade([f1, Table([0.3, 0.3])], (cond,)).fit()
    assert cas.evaluate(id_matrix(2)).stage.tolist() == [0, 0]
    with pytest.raises(ValueError):
        Composite("xor", ())


def test_validation_errors():
    with pytest.raises(ValueError):
        Cascade([], ()).fit()
    with pytest.raises(ValueError):
        Cascade([Table([0.1])], (ThresholdGE(0, 0.5),)).fit()
    with pytest.raises(ValueError):
        Cascade([Table([0.1]), Table([0.1])], (ThresholdGE(3, 0.5),)).fit()
    with pytest.raises(ValueError):
        Cascade([Table([0.1], dim=4), Table([0.1], dim=5)], (ThresholdGE(0, 0.5),)).fit()
    with pytest.raises(ValueError):
        Cascade([Table([0.1])], (), threshold=1.5).fit()


def test_decide_reports_diagnostics():
    f1, f2 = Table([0.3]), Table([0.6])
    cas = Cascade([f1, f2, f1], (ThresholdGE(0, 0.5), ThresholdGE(1, 0.5))).fit()
    dec = cas.decide(id_matrix(1))
    assert (dec.stage, dec.label, dec.score) == (1, 1, 0.6)
    assert dec.stage_scores == (0.3, 0.6, 0.3)


def test_matches_naive_reference():
    rng = np.random.default_rng(0)
    pool, anomalies = make_pool(12, 0)
    X = (rng.random((200, 12)) < 0.3).astype(float)
    for _ in range(8):
        cas = random_cascade(rng, pool, anomalies)
        res = cas.evaluate(X)
        score, stage = naive_evaluate(cas, X)
        assert np.array_equal(res.stage, stage)
        assert np.array_equal(res.score, score)


def test_deeptrust_wiring(fitted_mlp, small_data):
    emb = fitted_mlp.transform(small_data)
    iforest = IsolationForestDetector(n_trees=10, max_samples=64).fit(emb)
    cas = build_deeptrust(fitted_mlp, fitted_mlp, iforest)
    assert cas.detectors[0] is cas.detectors[2]
    assert cas.conditions[0] == ThresholdGE(0, 0.78)
    c2 = cas.conditions[1]
    assert c2.op == "any" and isinstance(c2.conditions[1], InlierGate)
    X = small_data.to_csr()
    score, stage = naive_evaluate(cas, X)
    res = cas.evaluate(X)
    assert np.array_equal(res.score, score) and np.array_equal(res.stage, stage)
    bad = IsolationForestDetector(n_trees=2, max_samples=64).fit(np.zeros((100, 3)) + np.arange(3))
    with pytest.raises(ValueError, match="embeddings"):
        build_deeptrust(fitted_mlp, fitted_mlp, bad)


def test_multistep_and_ensemble():
    a, b = Table([0.8, 0.6, 0.1, 0.1]), Table([0.2, 0.9, 0.9, 0.3])
    ms = build_multistep(a, b)
    assert ms.predict(id_matrix(4)).tolist() == [1, 1, 1, 0]
    ens = EnsembleAverage([a, b]).fit()
    assert ens.malware_score(id_matrix(4)).tolist() == pytest.approx([0.5, 0.75, 0.5, 0.2])
    assert ens.predict_proba(id_matrix(4)).shape == (4, 2)


def test_condition_dict_round_trip():
    iforest = object()
    cond = Composite("all", (ThresholdGE(1, 0.3), Below(0, 0.2), InlierGate(1, iforest, 0.4)))
    doc = cond.to_dict({id(iforest): "a.npz"})
    back = condition_from_dict(doc, {"a.npz": iforest})
    assert back == cond and back.conditions[2].anomaly is iforest


def test_estimator_params():
    cas = Cascade([Table([0.1])], (), 0.4)
    assert clone(cas).get_params()["threshold"] == 0.4
