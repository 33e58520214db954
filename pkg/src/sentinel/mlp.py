"""Feed-forward binary detector written directly in numpy.

The low-level pieces (:func:`init_network`, :func:`forward`, :func:`backward`,
:class:`Adam`) work on CSR or dense batches. :class:`MLPDetector` wraps them
in an sklearn estimator that trains with minibatch Adam and keeps the epoch
checkpoint with the best validation F1.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import train_test_split

from ._validation import check_binary_matrix, check_is_fitted, check_targets, harden
from .metrics import f1_from_labels

LOSS_EPS = 1e-7


@dataclass
class Network:
    """Weights are stored ``(fan_in, fan_out)``; the last layer has one unit."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "leaky_relu"
    negative_slope: float = 0.01
    version: int = 0

    @property
    def n_features(self):
        return self.weights[0].shape[0]

    @property
    def hidden_sizes(self):
        return tuple(w.shape[1] for w in self.weights[:-1])

    @property
    def embedding_size(self):
        return self.weights[-1].shape[0]

    def copy(self):
        return copy.deepcopy(self)

    def parameters(self):
        return self.weights + self.biases

    def slope(self):
        return self.negative_slope if self.activation == "leaky_relu" else 0.0


def init_network(n_features, hidden_sizes, rng, activation="leaky_relu", negative_slope=0.01):
    """He-uniform weights (bound ``sqrt(6 / fan_in)``), zero biases."""
    if activation not in ("relu", "leaky_relu"):
        raise ValueError(f"unknown activation {activation!r}")
    sizes = [int(n_features), *(int(h) for h in hidden_sizes), 1]
    if len(sizes) < 3 or min(sizes) < 1:
        raise ValueError("need at least one hidden layer of positive width")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Network(weights, biases, activation, float(negative_slope))


@dataclass
class ForwardTrace:
    inputs: object
    pre: list
    act: list
    masks: list
    logit: np.ndarray
    proba: np.ndarray
    version: int

    @property
    def embedding(self):
        """Last hidden layer after the activation (dropout not applied)."""
        return self.act[-1]


def _matmul(X, W):
    out = X @ W
    return np.asarray(out)


def forward(net, X, train=False, dropout=0.0, rng=None):
    """Run the network on a batch.

    ``train=True`` applies inverted dropout with keep probability
    ``1 - dropout``; inference applies no mask and no rescaling.
    """
    if X.shape[1] != net.n_features:
        raise ValueError(f"input has {X.shape[1]} features, network expects {net.n_features}")
    slope = net.slope()
    pre, act, masks = [], [], []
    h = X
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        z = _matmul(h, W) + b
        a = np.where(z > 0, z, slope * z)
        pre.append(z)
        act.append(a)
        if train and dropout > 0.0:
            mask = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
            masks.append(mask)
            h = a * mask
        else:
            masks.append(None)
            h = a
    logit = (h @ net.weights[-1]).ravel() + net.biases[-1][0]
    return ForwardTrace(X, pre, act, masks, logit, expit(logit), net.version)


def weighted_bce(proba, target, pos_weight=1.0):
    """Per-sample ``-[w y log p + (1 - y) log(1 - p)]`` with p clamped to [1e-7, 1-1e-7]."""
    p = np.clip(np.asarray(proba, dtype=np.float64), LOSS_EPS, 1.0 - LOSS_EPS)
    y = np.asarray(target, dtype=np.float64)
    return -(pos_weight * y * np.log(p) + (1.0 - y) * np.log1p(-p))


@dataclass
class Gradients:
    """Gradients of the batch-mean loss.

    ``first_delta`` is the loss gradient at the first layer's
    pre-activation; input gradients are derived from it on demand so the
    full ``(n, d)`` matrix is only built when asked for.
    """

    weights: list
    biases: list
    first_delta: np.ndarray
    first_weight: np.ndarray = field(repr=False)

    def parameters(self):
        return self.weights + self.biases

    def input_gradient(self, columns=None):
        """Per-sample input gradients, shape ``(n, d)`` or ``(n, len(columns))``."""
        W = self.first_weight if columns is None else self.first_weight[columns]
        return self.first_delta @ W.T

    def summed_input_gradient(self, columns=None):
        """Input gradient summed over the batch, i.e. the batch-mean gradient
        of the per-sample loss."""
        W = self.first_weight if columns is None else self.first_weight[columns]
        return W @ self.first_delta.sum(axis=0)


def backward(net, trace, target, pos_weight=1.0):
    """Exact gradients of ``mean(weighted_bce)`` for the traced batch."""
    if trace.version != net.version:
        raise ValueError("stale trace: network parameters changed since forward")
    y = np.asarray(target, dtype=np.float64).ravel()
    n = y.shape[0]
    if n != trace.logit.shape[0]:
        raise ValueError("target length does not match the traced batch")
    p = trace.proba
    # d loss / d logit; the unclamped form keeps saturated mistakes trainable
    dz = ((p * (1.0 + (pos_weight - 1.0) * y) - pos_weight * y) / n)[:, None]
    slope = net.slope()
    L = len(net.weights)
    gW, gb = [None] * L, [None] * L
    h_last = trace.act[-1] if trace.masks[-1] is None else trace.act[-1] * trace.masks[-1]
    gW[-1] = h_last.T @ dz
    gb[-1] = dz.sum(axis=0)
    dh = dz @ net.weights[-1].T
    for l in range(L - 2, -1, -1):
        if trace.masks[l] is not None:
            dh = dh * trace.masks[l]
        dz = dh * np.where(trace.pre[l] > 0, 1.0, slope)
        if l == 0:
            h_prev = trace.inputs
        else:
            h_prev = trace.act[l - 1] if trace.masks[l - 1] is None else trace.act[l - 1] * trace.masks[l - 1]
        gW[l] = np.asarray(h_prev.T @ dz)
        gb[l] = dz.sum(axis=0)
        if l > 0:
            dh = dz @ net.weights[l].T
    return Gradients(gW, gb, dz, net.weights[0])


class Adam:
    """Bias-corrected Adam with decoupled weight decay.

    Decay is applied as ``theta -= lr * weight_decay * theta`` before the
    moment update.
    """

    def __init__(self, net, learning_rate=1e-3, beta1=0.99, beta2=0.999,
                 epsilon=1e-8, weight_decay=0.0):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in net.parameters()]
        self.v = [np.zeros_like(p) for p in net.parameters()]
        self.t = 0

    def step(self, net, grads):
        params = net.parameters()
        g_list = grads.parameters() if hasattr(grads, "parameters") else list(grads)
        if len(g_list) != len(params):
            raise ValueError("gradient list does not match parameters")
        self.t += 1
        lr, b1, b2 = self.learning_rate, self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, g_list, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if self.weight_decay:
                p -= lr * self.weight_decay * p
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
        net.version += 1
        return net


def predict_network(net, X, chunk=4096):
    """Inference-mode ``(logit, proba, embedding)`` arrays, chunked over rows."""
    logits, probas, embeds = [], [], []
    for start in range(0, X.shape[0], chunk):
        tr = forward(net, X[start:start + chunk])
        logits.append(tr.logit)
        probas.append(tr.proba)
        embeds.append(tr.embedding)
    if not logits:
        e = net.embedding_size
        return np.empty(0), np.empty(0), np.empty((0, e))
    return np.concatenate(logits), np.concatenate(probas), np.vstack(embeds)


def split_indices(y, validation_fraction=0.2, random_state=0):
    """Stratified train/validation split on hardened labels."""
    labels = harden(y)
    idx = np.arange(labels.shape[0])
    stratify = labels if np.bincount(labels, minlength=2).min() >= 2 else None
    train, val = train_test_split(
        idx, test_size=validation_fraction, random_state=random_state, stratify=stratify
    )
    return np.sort(train), np.sort(val)


def _streams(random_state):
    # init, split, shuffle, dropout, subclass extras
    return np.random.SeedSequence(random_state).spawn(5)


def training_split(y, validation_fraction=0.2, random_state=0):
    """The train/validation split :meth:`MLPDetector.fit` uses for ``random_state``."""
    seed = int(_streams(random_state)[1].generate_state(1)[0])
    return split_indices(y, validation_fraction, seed)


@dataclass
class Prediction:
    probability: np.ndarray
    logit: np.ndarray
    embedding: np.ndarray


class MLPDetector(ClassifierMixin, BaseEstimator):
    """Multilayer perceptron malware detector.

    Parameters
    ----------
    hidden_sizes : tuple of int
    activation : {"leaky_relu", "relu"}
    negative_slope : float
        Leaky-ReLU slope for negative inputs.
    dropout : float
        Drop probability for hidden units at training time.
    pos_class_weight : float
        Weight of the positive-class term in the cross-entropy.
    learning_rate, beta1, beta2, epsilon, weight_decay : float
        Adam settings; weight decay is decoupled.
    epochs, batch_size : int
    validation_fraction : float
        Held-out share used to pick the best epoch by F1.
    random_state : int
    """

    def __init__(self, hidden_sizes=(128, 64), activation="leaky_relu", negative_slope=0.01,
                 dropout=0.0, pos_class_weight=1.0, learning_rate=1e-3, beta1=0.99,
                 beta2=0.999, epsilon=1e-8, weight_decay=0.0, epochs=10, batch_size=32,
                 validation_fraction=0.2, random_state=0):
        self.hidden_sizes = hidden_sizes
        self.activation = activation
        self.negative_slope = negative_slope
        self.dropout = dropout
        self.pos_class_weight = pos_class_weight
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _validate_params(self):
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("hidden_sizes needs at least one positive layer width")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.pos_class_weight <= 0:
            raise ValueError("pos_class_weight must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")

    # hooks overridden by the adversarial trainer
    def _n_passes(self):
        return self.epochs

    def _begin_fit(self, X, rng):
        pass

    def _train_batch(self, net, adam, Xb, yb, dropout_rng):
        trace = forward(net, Xb, train=True, dropout=self.dropout, rng=dropout_rng)
        grads = backward(net, trace, yb, self.pos_class_weight)
        adam.step(net, grads)

    def fit(self, X, y, y_select=None):
        """Train on ``(X, y)``.

        ``y`` may hold smoothed targets in [0, 1]. ``y_select`` gives the
        labels used for the split and for validation F1; it defaults to
        ``y`` hardened at 0.5.
        """
        self._validate_params()
        X = check_binary_matrix(X)
        y = check_targets(y, X.shape[0])
        if X.shape[0] == 0:
            raise ValueError("cannot fit on an empty dataset")
        sel = harden(y if y_select is None else check_targets(y_select, X.shape[0]))
        init_ss, _, shuffle_ss, dropout_ss, extra_ss = _streams(self.random_state)
        train_idx, val_idx = training_split(sel, self.validation_fraction, self.random_state)
        if np.unique(sel[train_idx]).size < 2:
            raise ValueError("training split contains a single class")
        Xtr, ytr = X[train_idx], y[train_idx]
        Xval, yval = X[val_idx], sel[val_idx]

        net = init_network(X.shape[1], self.hidden_sizes, np.random.default_rng(init_ss),
                           self.activation, self.negative_slope)
        adam = Adam(net, self.learning_rate, self.beta1, self.beta2, self.epsilon,
                    self.weight_decay)
        shuffle_rng = np.random.default_rng(shuffle_ss)
        dropout_rng = np.random.default_rng(dropout_ss)
        self._begin_fit(X, np.random.default_rng(extra_ss))

        best, best_f1, best_epoch = net.copy(), -1.0, 0
        history = []
        for epoch in range(1, self._n_passes() + 1):
            order = shuffle_rng.permutation(Xtr.shape[0])
            for start in range(0, order.shape[0], self.batch_size):
                rows = order[start:start + self.batch_size]
                self._train_batch(net, adam, Xtr[rows], ytr[rows], dropout_rng)
            _, proba, _ = predict_network(net, Xval)
            score = f1_from_labels((proba >= 0.5).astype(int), yval)
            history.append(score)
            if score > best_f1:
                best, best_f1, best_epoch = net.copy(), score, epoch
        if not history:
            _, proba, _ = predict_network(net, Xval)
            best_f1 = f1_from_labels((proba >= 0.5).astype(int), yval)

        self.network_ = best
        self.final_network_ = net
        self.validation_f1_ = best_f1
        self.best_epoch_ = best_epoch
        self.history_ = history
        self.train_indices_ = train_idx
        self.validation_indices_ = val_idx
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        return self

    def _check_X(self, X):
        check_is_fitted(self, "network_")
        return check_binary_matrix(X, self.network_.n_features)

    def _predict(self, X):
        X = self._check_X(X)
        return predict_network(self.network_, X)

    def decision_function(self, X):
        """Pre-sigmoid logits."""
        return self._predict(X)[0]

    def predict_proba(self, X):
        p = self._predict(X)[1]
        return np.column_stack([1.0 - p, p])

    def malware_score(self, X):
        """Probability of the malware class, shape ``(n,)``."""
        return self._predict(X)[1]

    def predict(self, X):
        return (self.malware_score(X) >= 0.5).astype(np.int64)

    def transform(self, X):
        """Last-hidden-layer embeddings."""
        return self._predict(X)[2]

    def predict_batch(self, X):
        logit, proba, emb = self._predict(X)
        return Prediction(proba, logit, emb)
