"""Random-forest teacher on binary features and teacher-based label smoothing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import check_binary_matrix, check_is_fitted, check_targets

_MIN_DECREASE = 1e-12


@dataclass
class PresenceTree:
    """Binary tree splitting on feature presence (``x_f == 1`` goes right).

    Leaves have ``feature == -1`` and store a class-weighted positive
    fraction in ``value``.
    """

    feature: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self):
        return self.feature.shape[0]

    def depth(self):
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def apply(self, X):
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            feats = self.feature[node[active]]
            present = np.asarray(X[active, feats]).ravel() > 0
            node[active] = np.where(present, self.right[node[active]], self.left[node[active]])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X):
        return self.value[self.apply(X)]


def _impurity(pos, total, criterion):
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(total > 0, pos / np.where(total > 0, total, 1.0), 0.0)
    if criterion == "gini":
        return 2.0 * p * (1.0 - p)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -(np.where(p > 0, p * np.log2(p), 0.0) + np.where(q > 0, q * np.log2(q), 0.0))
    return ent


def _grow_tree(X, y, weight, rows, rng, criterion, min_samples_leaf, max_depth, n_candidates):
    feature, left, right, value = [], [], [], []

    def new_node():
        feature.append(-1)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    d = X.shape[1]
    stack = [(new_node(), rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        w = weight[idx]
        w_total = w.sum()
        w_pos = (w * y[idx]).sum()
        value[node] = w_pos / w_total
        if (w_pos == 0.0 or w_pos == w_total or idx.size < 2 * min_samples_leaf
                or (max_depth is not None and depth >= max_depth)):
            continue
        cand = np.sort(rng.choice(d, size=n_candidates, replace=False))
        M = X[idx][:, cand]
        n_right = np.asarray(M.sum(axis=0)).ravel()
        w_right = np.asarray(M.T @ w).ravel()
        pos_right = np.asarray(M.T @ (w * y[idx])).ravel()
        n_left = idx.size - n_right
        w_left, pos_left = w_total - w_right, w_pos - pos_right
        decrease = (w_total * _impurity(np.array([w_pos]), np.array([w_total]), criterion)[0]
                    - w_left * _impurity(pos_left, w_left, criterion)
                    - w_right * _impurity(pos_right, w_right, criterion))
        valid = (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)
        decrease = np.where(valid, decrease, -np.inf)
        best = int(np.argmax(decrease))
        if not decrease[best] > _MIN_DECREASE:
            continue
        f = int(cand[best])
        present = np.asarray(X[idx, np.full(idx.size, f)]).ravel() > 0
        feature[node] = f
        l_node, r_node = new_node(), new_node()
        left[node], right[node] = l_node, r_node
        stack.append((r_node, idx[present], depth + 1))
        stack.append((l_node, idx[~present], depth + 1))
    return PresenceTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
    )


class RandomForestTeacher(ClassifierMixin, BaseEstimator):
    """Class-weighted random forest over presence splits.

    Parameters
    ----------
    n_trees : int
    criterion : {"gini", "entropy"}
    min_samples_leaf : int
    max_depth : int or None
    features_per_split : int or None
        Candidates sampled per node; ``None`` uses ``floor(sqrt(d))``.
    pos_class_weight : float
        Positive samples count this much in impurities and leaf values.
    bootstrap : bool
    random_state : int
    """

    def __init__(self, n_trees=60, criterion="gini", min_samples_leaf=50, max_depth=None,
                 features_per_split=None, pos_class_weight=1.0, bootstrap=True,
                 random_state=0):
        self.n_trees = n_trees
        self.criterion = criterion
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.features_per_split = features_per_split
        self.pos_class_weight = pos_class_weight
        self.bootstrap = bootstrap
        self.random_state = random_state

    def fit(self, X, y):
        if self.n_trees < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_trees and min_samples_leaf must be >= 1")
        if self.criterion not in ("gini", "entropy"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        X = check_binary_matrix(X)
        y = check_targets(y, X.shape[0])
        if X.shape[0] == 0:
            raise ValueError("cannot fit on an empty dataset")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("the teacher needs discrete labels")
        d = X.shape[1]
        n_cand = self.features_per_split or max(1, int(np.sqrt(d)))
        if not 1 <= n_cand <= d:
            raise ValueError("features_per_split must lie in [1, d]")
        weight = np.where(y == 1, float(self.pos_class_weight), 1.0)
        trees = []
        for ss in np.random.SeedSequence(self.random_state).spawn(self.n_trees):
            rng = np.random.default_rng(ss)
            if self.bootstrap:
                rows = np.sort(rng.integers(0, X.shape[0], size=X.shape[0]))
            else:
                rows = np.arange(X.shape[0])
            trees.append(_grow_tree(X, y, weight, rows, rng, self.criterion,
                                    self.min_samples_leaf, self.max_depth, n_cand))
        self.trees_ = trees
        self.n_features_in_ = d
        self.classes_ = np.array([0, 1])
        return self

    def malware_score(self, X):
        check_is_fitted(self, "trees_")
        X = check_binary_matrix(X, self.n_features_in_)
        return np.mean([t.predict(X) for t in self.trees_], axis=0)

    def predict_proba(self, X):
        p = self.malware_score(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.malware_score(X) >= 0.5).astype(np.int64)


def smooth_labels(y, teacher_scores, lam):
    """Blend labels with teacher probabilities: ``(1 - lam) * y + lam * f_s(x)``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(teacher_scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError("labels and teacher scores differ in shape")
    # rounding can leave the blend an ulp outside the segment [y, s]
    return np.clip((1.0 - lam) * y + lam * s, np.minimum(y, s), np.maximum(y, s))


def smooth_dataset(dataset, teacher, lam):
    """Return ``dataset`` with labels smoothed by ``teacher``; samples are shared."""
    if not dataset.is_discrete:
        raise ValueError("label smoothing expects a discrete dataset")
    scores = teacher.malware_score(dataset.to_csr())
    return dataset.with_labels(smooth_labels(dataset.y, scores, lam).tolist())
