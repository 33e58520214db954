"""Isolation forest over detector embeddings."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin

from ._validation import check_is_fitted, check_real_matrix

EULER_GAMMA = 0.5772156649
POLARITIES = ("inlier", "anomalous")


def average_path_length(n):
    """``c(n) = 2 H(n-1) - 2 (n-1) / n`` with ``H(i) = ln(i) + gamma``; 0 for n <= 1."""
    n = np.asarray(n, dtype=np.float64)
    safe = np.where(n > 1, n, 2.0)
    c = 2.0 * (np.log(safe - 1.0) + EULER_GAMMA) - 2.0 * (safe - 1.0) / safe
    out = np.where(n > 1, c, 0.0)
    return out if out.ndim else float(out)


@dataclass
class IsolationTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    def path_length(self, E):
        node = np.zeros(E.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            cur = node[active]
            go_left = E[active, self.feature[cur]] < self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return self.depth[node] + average_path_length(self.size[node])


def _grow_isolation_tree(E, rng, height_limit):
    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def new_node(n, dep):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(n)
        depth.append(dep)
        return len(feature) - 1

    stack = [(new_node(E.shape[0], 0), E)]
    while stack:
        node, part = stack.pop()
        dep = depth[node]
        if dep >= height_limit or part.shape[0] <= 1:
            continue
        lo, hi = part.min(axis=0), part.max(axis=0)
        varying = np.flatnonzero(hi > lo)
        if varying.size == 0:
            continue
        f = int(varying[rng.integers(varying.size)])
        v = rng.uniform(lo[f], hi[f])
        if v <= lo[f]:
            v = np.nextafter(lo[f], hi[f])
        mask = part[:, f] < v
        feature[node] = f
        threshold[node] = v
        l_node = new_node(int(mask.sum()), dep + 1)
        r_node = new_node(int((~mask).sum()), dep + 1)
        left[node], right[node] = l_node, r_node
        stack.append((r_node, part[~mask]))
        stack.append((l_node, part[mask]))
    return IsolationTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(size, dtype=np.int64),
        np.asarray(depth, dtype=np.float64),
    )


class IsolationForestDetector(OutlierMixin, BaseEstimator):
    """Isolation forest with a contamination-calibrated score threshold.

    Parameters
    ----------
    n_trees : int
    max_samples : int
        Subsample size per tree; the tree height is capped at
        ``ceil(log2(max_samples))``.
    contamination : float
        Share of training points scored above the threshold, in (0, 0.5].
    gate_polarity : {"inlier", "anomalous"}
        What :meth:`gate` reports as true.
    random_state : int
    """

    def __init__(self, n_trees=100, max_samples=256, contamination=0.14,
                 gate_polarity="inlier", random_state=0):
        self.n_trees = n_trees
        self.max_samples = max_samples
        self.contamination = contamination
        self.gate_polarity = gate_polarity
        self.random_state = random_state

    def fit(self, E, y=None):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_samples < 2:
            raise ValueError("max_samples must be >= 2")
        if not 0.0 < self.contamination <= 0.5:
            raise ValueError("contamination must lie in (0, 0.5]")
        if self.gate_polarity not in POLARITIES:
            raise ValueError(f"unknown gate polarity {self.gate_polarity!r}")
        E = check_real_matrix(E)
        if E.shape[0] < self.max_samples:
            raise ValueError(f"need at least max_samples={self.max_samples} rows, got {E.shape[0]}")
        psi = int(self.max_samples)
        height = math.ceil(math.log2(psi))
        trees = []
        for ss in np.random.SeedSequence(self.random_state).spawn(self.n_trees):
            rng = np.random.default_rng(ss)
            rows = rng.choice(E.shape[0], size=psi, replace=False)
            trees.append(_grow_isolation_tree(E[rows], rng, height))
        self.trees_ = trees
        self.n_features_in_ = E.shape[1]
        self.subsample_size_ = psi
        self.threshold_ = float(np.quantile(self._score(E), 1.0 - self.contamination))
        return self

    def _score(self, E):
        mean_path = np.mean([t.path_length(E) for t in self.trees_], axis=0)
        return np.power(2.0, -mean_path / average_path_length(self.subsample_size_))

    def anomaly_score(self, E):
        """``2 ** (-E[h(e)] / c(psi))``; larger is more anomalous."""
        check_is_fitted(self, "trees_")
        return self._score(check_real_matrix(E, self.n_features_in_))

    def is_anomalous(self, E):
        """Strictly above the calibrated threshold; ties count as inliers."""
        return self.anomaly_score(E) > self.threshold_

    def gate(self, E):
        """The boolean anomaly signal under the configured polarity."""
        anomalous = self.is_anomalous(E)
        return ~anomalous if self.gate_polarity == "inlier" else anomalous

    def predict(self, E):
        """sklearn outlier convention: -1 anomalous, 1 inlier."""
        return np.where(self.is_anomalous(E), -1, 1)
