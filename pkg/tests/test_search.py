import pytest

from sentinel.search import STAGE1_SPACE, STAGE2_SPACE, Range, check_space, random_search


def test_range_grids():
    assert Range(0.0, 0.75, 0.05).grid()[-1] == 0.75
    assert len(Range(0.0, 0.75, 0.05).grid()) == 16
    assert Range(25, 200, 50).grid() == [25, 75, 125, 175]
    assert Range(2, 20, 1).grid() == list(range(2, 21))
    with pytest.raises(ValueError):
        Range(1, 0, 1).grid()


def test_space_validation():
    with pytest.raises(ValueError):
        check_space({})
    with pytest.raises(ValueError):
        check_space({"a": []})
    grids = check_space(STAGE1_SPACE)
    assert grids["n_layers"] == [2, 3] and grids["hidden"] == [32, 64, 128, 256]
    assert check_space(STAGE2_SPACE)["strategy"] == ["topk", "random"]


def test_single_trial_and_tie_rule():
    space = {"a": [1, 2, 3], "b": Range(0, 10, 1)}
    best, value, log = random_search(space, lambda p: 1.0, 5, seed=4)
    assert best == log[0]["params"] and value == 1.0
    one, _, log1 = random_search(space, lambda p: p["a"], 1, seed=4)
    assert one == log1[0]["params"] == log[0]["params"]
    with pytest.raises(ValueError):
        random_search(space, lambda p: 0.0, 0)


def test_best_dominates_log_and_is_seeded():
    space = {"x": Range(0, 100, 1)}
    best, value, log = random_search(space, lambda p: -abs(p["x"] - 42), 30, seed=1)
    assert all(value >= t["objective"] for t in log) and value == -abs(best["x"] - 42)
    assert random_search(space, lambda p: -abs(p["x"] - 42), 30, seed=1)[2] == log
