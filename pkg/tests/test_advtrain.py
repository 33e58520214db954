import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from sentinel.advtrain import AdversarialMLPDetector, perturb_batch, select_features, update_delta
from sentinel.features import Category, FeatureSpace
from sentinel.mlp import MLPDetector


def test_topk_example():
    assert select_features("topk", [0, 1, 2], [0.5, -2.0, 0.1], 1).tolist() == [1]


def test_topk_ties_prefer_lower_index():
    assert select_features("topk", [4, 7, 9], [1.0, -1.0, 1.0], 2).tolist() == [4, 7]


def test_topk_whole_set_and_random_cardinality():
    elig = np.arange(10)
    assert select_features("topk", elig, np.ones(10), 10).tolist() == list(range(10))
    rng = np.random.default_rng(0)
    sel = select_features("random", elig, None, 3, rng)
    assert sel.size == 3 and set(sel) <= set(elig)
    assert select_features("none", elig, None, 3).size == 0


def test_select_rejects_empty_and_unknown():
    with pytest.raises(ValueError):
        select_features("topk", [], [], 1)
    with pytest.raises(ValueError):
        select_features("best", [1], [1.0], 1)


def test_update_delta_hand_trace():
    out = update_delta(np.zeros(3, np.int8), np.array([0.3, -0.2, 0.0]), [0, 1, 2], 3,
                       np.random.default_rng(0))
    assert out.tolist() == [1, -1, 0]


def test_update_delta_saturates():
    out = update_delta(np.array([1, 0], np.int8), np.array([5.0, 0.0]), [0], 2,
                       np.random.default_rng(0))
    assert out.tolist() == [1, 0]


def test_update_delta_trims_to_budget():
    delta = np.array([1, -1, 1, 0, 0], np.int8)
    out = update_delta(delta, np.array([0, 0, 0, 1.0, -1.0]), [3, 4], 3, np.random.default_rng(1))
    assert np.count_nonzero(out) == 3
    assert delta.tolist() == [1, -1, 1, 0, 0]


def test_update_delta_add_only_never_negative():
    out = update_delta(np.zeros(4, np.int8), -np.ones(4), [0, 1, 2, 3], 4,
                       np.random.default_rng(0), add_only=np.array([True, True, False, False]))
    assert out.tolist() == [0, 0, -1, -1]


@settings(max_examples=200)
@given(st.lists(st.integers(-1, 1), min_size=12, max_size=12),
       st.lists(st.floats(-3, 3), min_size=12, max_size=12),
       st.sets(st.integers(0, 11)), st.integers(1, 12), st.integers(0, 1000))
def test_update_delta_invariants(delta, g, selected, k, seed):
    delta = np.array(delta, np.int8)
    if np.count_nonzero(delta) > k:
        delta[np.flatnonzero(delta)[k:]] = 0
    out = update_delta(delta, np.array(g), sorted(selected), k, np.random.default_rng(seed))
    assert np.count_nonzero(out) <= k
    assert set(np.unique(out)) <= {-1, 0, 1}
    untouched = np.setdiff1d(np.arange(12), sorted(selected))
    # unselected coordinates only change by being trimmed to zero
    assert np.all((out[untouched] == delta[untouched]) | (out[untouched] == 0))


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_perturb_batch_is_exact_clip(seed):
    rng = np.random.default_rng(seed)
    X = (rng.random((5, 9)) < 0.4).astype(float)
    delta = rng.integers(-1, 2, size=9).astype(np.int8)
    out = perturb_batch(sp.csr_matrix(X), delta)
    assert np.array_equal(out.toarray(), np.clip(X + delta, 0, 1))
    assert set(np.unique(out.data)) <= {1.0}


def test_degenerates_to_plain_training(small_data):
    kw = dict(hidden_sizes=(8, 4), epochs=3, dropout=0.2, random_state=5)
    plain = MLPDetector(**kw).fit(small_data, small_data.y)
    adv = AdversarialMLPDetector(**kw, replay_steps=1, strategy="none").fit(
        small_data, small_data.y)
    assert all(np.array_equal(a, b) for a, b in zip(plain.network_.parameters(),
                                                    adv.network_.parameters()))
    assert not adv.delta_.any()


def test_invariants_hold_after_every_replay(small_data):
    seen = []

    def monitor(delta, Xp):
        seen.append((np.count_nonzero(delta), set(np.unique(delta)), set(np.unique(Xp.data))))

    model = AdversarialMLPDetector(hidden_sizes=(8,), epochs=4, replay_steps=2, max_features=5,
                                   monitor=monitor).fit(small_data, small_data.y)
    assert len(seen) == 2 * 2 * int(np.ceil(320 / 32))
    assert all(n <= 5 and vals <= {-1, 0, 1} and data <= {1.0} for n, vals, data in seen)
    assert model.perturbation_.nnz == np.count_nonzero(model.delta_)


def test_eligible_restricts_perturbation(small_data):
    model = AdversarialMLPDetector(hidden_sizes=(8,), epochs=2, max_features=3,
                                   eligible=range(40, 50)).fit(small_data, small_data.y)
    assert set(np.flatnonzero(model.delta_)) <= set(range(40, 50))


def test_add_only_categories_respected(small_data):
    fs = FeatureSpace(60, (Category("perm", 0, 60, add_only=True),))
    model = AdversarialMLPDetector(hidden_sizes=(8,), epochs=2, max_features=6,
                                   feature_space=fs).fit(small_data, small_data.y)
    assert model.delta_.min() >= 0


def test_reset_delta_clears_after_each_batch(small_data):
    model = AdversarialMLPDetector(hidden_sizes=(8,), epochs=2, reset_delta=True).fit(
        small_data, small_data.y)
    assert not model.delta_.any()


def test_outer_loop_rounds_up(small_data):
    model = AdversarialMLPDetector(hidden_sizes=(8,), epochs=5, replay_steps=2).fit(
        small_data, small_data.y)
    assert len(model.history_) == 3


def test_deterministic(small_data):
    kw = dict(hidden_sizes=(8,), epochs=2, strategy="random", random_state=2)
    a = AdversarialMLPDetector(**kw).fit(small_data, small_data.y)
    b = AdversarialMLPDetector(**kw).fit(small_data, small_data.y)
    assert np.array_equal(a.delta_, b.delta_)
    assert np.array_equal(a.decision_function(small_data), b.decision_function(small_data))


@pytest.mark.parametrize("kw", [dict(max_features=61), dict(replay_steps=0),
                                dict(strategy="greedy"), dict(eligible=[])])
def test_bad_configs(small_data, kw):
    with pytest.raises(ValueError):
        AdversarialMLPDetector(hidden_sizes=(4,), epochs=1, **kw).fit(small_data, small_data.y)
