"""Multi-step classification: ordered detectors gated by activation conditions.

Slots and stages are 0-based. Stage ``i < n - 1`` decides a sample when its
condition fires; otherwise the sample falls through to the next stage and the
last detector decides whatever is left. A detector is anything exposing
``malware_score(X)``; :class:`InlierGate` also needs ``transform(X)`` for
embeddings. Slots may alias one detector, whose outputs are then computed
once per row.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import check_binary_matrix


class _Context:
    """Lazy, memoised per-row access to detector outputs."""

    def __init__(self, detectors, X):
        self.detectors = detectors
        self.X = X
        n = X.shape[0]
        self._scores = {}
        self._embeds = {}
        self._n = n

    def _fill(self, slot, rows, want_embedding):
        det = self.detectors[slot]
        key = id(det)
        scores = self._scores.setdefault(key, np.full(self._n, np.nan))
        missing = rows[np.isnan(scores[rows])]
        if want_embedding:
            emb = self._embeds.get(key)
            if emb is not None:
                need_emb = rows[np.isnan(emb[rows, 0])]
            else:
                need_emb = rows
        else:
            need_emb = rows[:0]
        if hasattr(det, "predict_batch") and (missing.size or need_emb.size):
            fetch = np.union1d(missing, need_emb) if want_embedding else missing
            pred = det.predict_batch(self.X[fetch])
            scores[fetch] = pred.probability
            emb = self._embeds.get(key)
            if emb is None:
                emb = np.full((self._n, pred.embedding.shape[1]), np.nan)
                self._embeds[key] = emb
            emb[fetch] = pred.embedding
            return
        if missing.size:
            scores[missing] = det.malware_score(self.X[missing])
        if need_emb.size:
            e = np.asarray(det.transform(self.X[need_emb]))
            emb = self._embeds.get(key)
            if emb is None:
                emb = np.full((self._n, e.shape[1]), np.nan)
                self._embeds[key] = emb
            emb[need_emb] = e

    def score(self, slot, rows):
        self._fill(slot, rows, False)
        return self._scores[id(self.detectors[slot])][rows]

    def embedding(self, slot, rows):
        self._fill(slot, rows, True)
        return self._embeds[id(self.detectors[slot])][rows]

    def stage_scores(self, slots):
        n_slots = len(slots)
        out = np.full((self._n, n_slots), np.nan)
        for i, det in enumerate(slots):
            s = self._scores.get(id(det))
            if s is not None:
                out[:, i] = s
        return out


@dataclass(frozen=True)
class ThresholdGE:
    """Fires when the slot's score is at least ``sigma``."""

    slot: int
    sigma: float

    def evaluate(self, ctx, rows):
        return ctx.score(self.slot, rows) >= self.sigma

    def slots(self):
        return {self.slot}

    def to_dict(self, refs):
        return {"type": "ge", "slot": self.slot, "sigma": self.sigma}


@dataclass(frozen=True)
class Below:
    """Fires when the slot's score is strictly below ``sigma``."""

    slot: int
    sigma: float

    def evaluate(self, ctx, rows):
        return ctx.score(self.slot, rows) < self.sigma

    def slots(self):
        return {self.slot}

    def to_dict(self, refs):
        return {"type": "lt", "slot": self.slot, "sigma": self.sigma}


@dataclass(frozen=True)
class InlierGate:
    """Fires when the slot leans benign and ``anomaly.gate`` holds on its embedding."""

    slot: int
    anomaly: object = field(compare=False)
    sigma: float = 0.5

    def evaluate(self, ctx, rows):
        out = np.zeros(rows.shape[0], dtype=bool)
        low = ctx.score(self.slot, rows) < self.sigma
        if low.any():
            out[low] = self.anomaly.gate(ctx.embedding(self.slot, rows[low]))
        return out

    def slots(self):
        return {self.slot}

    def to_dict(self, refs):
        return {"type": "inlier_gate", "slot": self.slot, "sigma": self.sigma,
                "anomaly": refs[id(self.anomaly)]}


@dataclass(frozen=True)
class Composite:
    """``any`` or ``all`` of sub-conditions, short-circuiting per row."""

    op: str
    conditions: tuple

    def __post_init__(self):
        if self.op not in ("any", "all"):
            raise ValueError(f"unknown combinator {self.op!r}")
        object.__setattr__(self, "conditions", tuple(self.conditions))

    def evaluate(self, ctx, rows):
        is_any = self.op == "any"
        out = np.full(rows.shape[0], not is_any)
        open_ = np.arange(rows.shape[0])
        for cond in self.conditions:
            if open_.size == 0:
                break
            hit = cond.evaluate(ctx, rows[open_])
            if is_any:
                out[open_[hit]] = True
                open_ = open_[~hit]
            else:
                out[open_[~hit]] = False
                open_ = open_[hit]
        return out

    def slots(self):
        return set().union(*(c.slots() for c in self.conditions))

    def to_dict(self, refs):
        return {"type": self.op, "conditions": [c.to_dict(refs) for c in self.conditions]}


def condition_from_dict(doc, anomaly_models):
    kind = doc["type"]
    if kind == "ge":
        return ThresholdGE(int(doc["slot"]), float(doc["sigma"]))
    if kind == "lt":
        return Below(int(doc["slot"]), float(doc["sigma"]))
    if kind == "inlier_gate":
        return InlierGate(int(doc["slot"]), anomaly_models[doc["anomaly"]], float(doc["sigma"]))
    if kind in ("any", "all"):
        return Composite(kind, tuple(condition_from_dict(c, anomaly_models)
                                     for c in doc["conditions"]))
    raise ValueError(f"unknown condition type {kind!r}")


@dataclass
class CascadeResult:
    score: np.ndarray
    stage: np.ndarray
    label: np.ndarray
    stage_scores: np.ndarray


@dataclass(frozen=True)
class CascadeDecision:
    score: float
    stage: int
    label: int
    stage_scores: tuple


class Cascade(ClassifierMixin, BaseEstimator):
    """Ordered detectors with ``len(detectors) - 1`` activation conditions.

    A sample is malware iff its deciding score is at least ``threshold``.
    """

    def __init__(self, detectors, conditions=(), threshold=0.5):
        self.detectors = detectors
        self.conditions = conditions
        self.threshold = threshold

    def _check(self):
        if len(self.detectors) < 1:
            raise ValueError("a cascade needs at least one detector")
        if len(self.conditions) != len(self.detectors) - 1:
            raise ValueError("need exactly one condition per non-final stage")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        for cond in self.conditions:
            bad = [s for s in cond.slots() if not 0 <= s < len(self.detectors)]
            if bad:
                raise ValueError(f"condition references missing slot(s) {bad}")
        dims = {getattr(d, "n_features_in_", None) for d in self.detectors} - {None}
        if len(dims) > 1:
            raise ValueError("detectors disagree on the input dimension")

    def fit(self, X=None, y=None):
        """Validate the configuration; the detectors are trained elsewhere."""
        self._check()
        dims = {getattr(d, "n_features_in_", None) for d in self.detectors} - {None}
        if dims:
            self.n_features_in_ = dims.pop()
        self.classes_ = np.array([0, 1])
        return self

    @property
    def n_stages(self):
        return len(self.detectors)

    def evaluate(self, X):
        self._check()
        X = check_binary_matrix(X, getattr(self, "n_features_in_", None))
        ctx = _Context(self.detectors, X)
        n = X.shape[0]
        score = np.full(n, np.nan)
        stage = np.full(n, -1, dtype=np.int64)
        pending = np.arange(n)
        for i, cond in enumerate(self.conditions):
            if pending.size == 0:
                break
            fired = cond.evaluate(ctx, pending)
            rows = pending[fired]
            if rows.size:
                score[rows] = ctx.score(i, rows)
                stage[rows] = i
            pending = pending[~fired]
        if pending.size:
            last = self.n_stages - 1
            score[pending] = ctx.score(last, pending)
            stage[pending] = last
        label = (score >= self.threshold).astype(np.int64)
        return CascadeResult(score, stage, label, ctx.stage_scores(self.detectors))

    def decide(self, x):
        """Single-sample decision with per-stage diagnostics."""
        res = self.evaluate(x)
        return CascadeDecision(float(res.score[0]), int(res.stage[0]), int(res.label[0]),
                               tuple(res.stage_scores[0].tolist()))

    def malware_score(self, X):
        return self.evaluate(X).score

    def predict(self, X):
        return self.evaluate(X).label

    def predict_proba(self, X):
        s = self.malware_score(X)
        return np.column_stack([1.0 - s, s])


def build_deeptrust(strong, weak, anomaly, sigma1=0.78, threshold=0.5):
    """Three-stage cascade ``[strong, weak, strong]`` with an inlier-gated second stage."""
    emb = getattr(weak, "network_", None)
    if emb is not None and anomaly.n_features_in_ != emb.embedding_size:
        raise ValueError(
            f"anomaly model expects {anomaly.n_features_in_}-d embeddings, "
            f"weak detector produces {emb.embedding_size}"
        )
    conditions = (
        ThresholdGE(0, sigma1),
        Composite("any", (ThresholdGE(1, 0.5), InlierGate(1, anomaly))),
    )
    return Cascade([strong, weak, strong], conditions, threshold).fit()


def build_multistep(first, second, sigma1=0.75, sigma2=0.5, threshold=0.5):
    """Ablation cascade ``[first, second, first]`` with plain score thresholds."""
    return Cascade([first, second, first],
                   (ThresholdGE(0, sigma1), ThresholdGE(1, sigma2)), threshold).fit()


class EnsembleAverage(ClassifierMixin, BaseEstimator):
    """Unweighted mean of detector scores, thresholded like the cascade."""

    def __init__(self, detectors, threshold=0.5):
        self.detectors = detectors
        self.threshold = threshold

    def fit(self, X=None, y=None):
        if len(self.detectors) < 1:
            raise ValueError("need at least one detector")
        self.classes_ = np.array([0, 1])
        return self

    def malware_score(self, X):
        return np.mean([d.malware_score(X) for d in self.detectors], axis=0)

    def predict(self, X):
        return (self.malware_score(X) >= self.threshold).astype(np.int64)

    def predict_proba(self, X):
        s = self.malware_score(X)
        return np.column_stack([1.0 - s, s])
