"""Adversarial training for binary tabular inputs with batch replay.

One perturbation vector ``delta`` in {-1, 0, 1}^d is shared by every sample.
Each minibatch is replayed ``replay_steps`` times. Every replay trains on
``clip(x + delta, 0, 1)``, takes an Adam step, then moves ``delta`` along
the sign of the batch input gradient, recomputed at the updated weights
without dropout, on at most ``max_features`` selected coordinates.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .features import FeatureSpace, Perturbation
from .mlp import MLPDetector, backward, forward

STRATEGIES = ("topk", "random", "none")


def select_features(strategy, eligible, g_adv, k, rng=None):
    """Choose up to ``k`` indices from ``eligible``.

    ``g_adv`` is aligned with ``eligible``. ``topk`` ranks by absolute
    gradient with ties going to the lower index; ``random`` draws a uniform
    subset and ignores the gradient; ``none`` selects nothing.
    """
    eligible = np.asarray(eligible, dtype=np.int64)
    if eligible.size == 0:
        raise ValueError("eligible feature set is empty")
    if strategy == "none":
        return np.empty(0, dtype=np.int64)
    k = min(int(k), eligible.size)
    if strategy == "topk":
        g = np.asarray(g_adv, dtype=np.float64)
        if g.shape != eligible.shape:
            raise ValueError("g_adv must be aligned with eligible")
        order = np.lexsort((eligible, -np.abs(g)))
        return np.sort(eligible[order[:k]])
    if strategy == "random":
        return np.sort(rng.choice(eligible, size=k, replace=False))
    raise ValueError(f"unknown strategy {strategy!r}")


def update_delta(delta, g_adv, selected, k, rng, add_only=None):
    """Signed step on the selected coordinates, then budget trim and clip.

    ``delta`` and ``g_adv`` are dense over the full dimension; the input is
    not modified. Entries above the budget ``k`` (counted as nonzeros) are
    zeroed uniformly at random before the final clip to [-1, 1]. Add-only
    coordinates never go below 0.
    """
    out = np.asarray(delta, dtype=np.int64).copy()
    selected = np.asarray(selected, dtype=np.int64)
    out[selected] += np.sign(np.asarray(g_adv)[selected]).astype(np.int64)
    if add_only is not None:
        np.maximum(out, 0, out=out, where=add_only)
    nz = np.flatnonzero(out)
    if nz.size > k:
        out[rng.choice(nz, size=nz.size - k, replace=False)] = 0
    np.clip(out, -1, 1, out=out)
    return out.astype(np.int8)


def perturb_batch(Xb, delta):
    """``clip(Xb + delta, 0, 1)`` for a CSR batch and a dense ``delta``."""
    cols = np.flatnonzero(delta)
    if cols.size == 0:
        return Xb
    old = Xb[:, cols].toarray()
    diff = np.clip(old + delta[cols], 0.0, 1.0) - old
    rows, pos = np.nonzero(diff)
    D = sp.csr_matrix((diff[rows, pos], (rows, cols[pos])), shape=Xb.shape)
    out = (Xb + D).tocsr()
    out.eliminate_zeros()
    return out


class AdversarialMLPDetector(MLPDetector):
    """:class:`MLPDetector` trained against an accumulated global perturbation.

    Extra parameters
    ----------------
    replay_steps : int
        Optimisation steps per minibatch (``m``). The number of passes over
        the data is ``ceil(epochs / replay_steps)``.
    max_features : int
        Budget ``k`` on the number of perturbed coordinates.
    strategy : {"topk", "random", "none"}
        ``none`` pins the perturbation at zero.
    reset_delta : bool
        Zero the perturbation after each minibatch's replays.
    feature_space : FeatureSpace or None
        Supplies add-only categories; ``None`` builds the default space.
    eligible : sequence of int or None
        Perturbable indices; ``None`` means every feature.
    monitor : callable or None
        Called after every replay step as ``monitor(delta, X_perturbed)``
        with the updated perturbation applied to the current batch.
    """

    def __init__(self, hidden_sizes=(128, 64), activation="leaky_relu", negative_slope=0.01,
                 dropout=0.0, pos_class_weight=1.0, learning_rate=1e-3, beta1=0.99,
                 beta2=0.999, epsilon=1e-8, weight_decay=0.0, epochs=10, batch_size=32,
                 validation_fraction=0.2, random_state=0, replay_steps=2, max_features=10,
                 strategy="topk", reset_delta=False, feature_space=None, eligible=None,
                 monitor=None):
        super().__init__(hidden_sizes, activation, negative_slope, dropout, pos_class_weight,
                         learning_rate, beta1, beta2, epsilon, weight_decay, epochs,
                         batch_size, validation_fraction, random_state)
        self.replay_steps = replay_steps
        self.max_features = max_features
        self.strategy = strategy
        self.reset_delta = reset_delta
        self.feature_space = feature_space
        self.eligible = eligible
        self.monitor = monitor

    def _n_passes(self):
        return math.ceil(self.epochs / self.replay_steps)

    def _begin_fit(self, X, rng):
        if self.replay_steps < 1 or self.max_features < 1:
            raise ValueError("replay_steps and max_features must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        space = self.feature_space or FeatureSpace(X.shape[1])
        if space.dimension != X.shape[1]:
            raise ValueError("feature_space dimension does not match X")
        mask = space.manipulability(self.eligible)
        if len(mask) == 0:
            raise ValueError("eligible feature set is empty")
        if self.max_features > len(mask):
            raise ValueError(f"max_features={self.max_features} exceeds |eligible|={len(mask)}")
        self._mask = mask
        self._all_eligible = len(mask) == X.shape[1]
        self._delta_rng = rng
        self.delta_ = np.zeros(X.shape[1], dtype=np.int8)

    def _train_batch(self, net, adam, Xb, yb, dropout_rng):
        mask = self._mask
        for _ in range(self.replay_steps):
            Xp = perturb_batch(Xb, self.delta_)
            trace = forward(net, Xp, train=True, dropout=self.dropout, rng=dropout_rng)
            grads = backward(net, trace, yb, self.pos_class_weight)
            adam.step(net, grads)
            if self.strategy != "none":
                # the perturbation follows the loss at the updated parameters
                fresh = backward(net, forward(net, Xp), yb, self.pos_class_weight)
                cols = None if self._all_eligible else mask.eligible
                g = fresh.summed_input_gradient(cols)
                selected = select_features(self.strategy, mask.eligible, g,
                                           self.max_features, self._delta_rng)
                g_full = g if self._all_eligible else np.zeros(mask.dimension)
                if not self._all_eligible:
                    g_full[mask.eligible] = g
                self.delta_ = update_delta(self.delta_, g_full, selected, self.max_features,
                                           self._delta_rng, mask.add_only)
            if self.monitor is not None:
                self.monitor(self.delta_, perturb_batch(Xb, self.delta_))
        if self.reset_delta:
            self.delta_ = np.zeros_like(self.delta_)

    @property
    def perturbation_(self):
        return Perturbation.from_dense(self.delta_)
