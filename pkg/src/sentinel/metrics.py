"""Detection metrics, the adversarial tuning objective and robustness reports."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

REPORT_FORMAT = "sentinel-report"
REPORT_VERSION = 1
FSA_BUDGETS = (25, 50, 100)


class UndefinedRateWarning(UserWarning):
    """A rate had a zero denominator and was reported as 0."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


def confusion(predicted, truth):
    predicted = np.asarray(predicted).astype(np.int64).ravel()
    truth = np.asarray(truth).astype(np.int64).ravel()
    if predicted.shape != truth.shape:
        raise ValueError(f"length mismatch: {predicted.shape[0]} vs {truth.shape[0]}")
    for arr in (predicted, truth):
        if arr.size and not np.all((arr == 0) | (arr == 1)):
            raise ValueError("labels must be binary")
    return ConfusionCounts(
        tp=int(np.sum((predicted == 1) & (truth == 1))),
        fp=int(np.sum((predicted == 1) & (truth == 0))),
        tn=int(np.sum((predicted == 0) & (truth == 0))),
        fn=int(np.sum((predicted == 0) & (truth == 1))),
    )


def _ratio(num, den, what):
    if den == 0:
        warnings.warn(f"{what} undefined (zero denominator); reporting 0", UndefinedRateWarning,
                      stacklevel=3)
        return 0.0
    return num / den


def tnr(counts):
    return _ratio(counts.tn, counts.tn + counts.fp, "TNR")


def tpr(counts):
    return _ratio(counts.tp, counts.tp + counts.fn, "TPR")


def f1(counts):
    return _ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn, "F1")


def f1_from_labels(predicted, truth):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedRateWarning)
        return f1(confusion(predicted, truth))


def aut(scores):
    """Area under time: trapezoidal mean of a per-round metric."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.shape[0] < 2:
        raise ValueError("aut needs at least two rounds")
    return float(np.sum((s[:-1] + s[1:]) / 2.0) / (s.shape[0] - 1))


def objective_j(tnr_value, tpr_clean, tpr_25, tpr_50, tpr_100):
    """Hinged TNR penalty times the geometric mean of clean and attacked TPRs."""
    values = (tnr_value, tpr_clean, tpr_25, tpr_50, tpr_100)
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise ValueError("objective inputs must lie in [0, 1]")
    # scaled to whole percent so the hinge and full-marks cases are exact in floats
    penalty = max(0.0, (100.0 * tnr_value - 95.0) / 5.0)
    if penalty == 0.0:
        return 0.0
    product = tpr_clean * tpr_25 * tpr_50 * tpr_100
    return penalty * product ** 0.25


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("sequences differ in length")
    if a.shape[0] < 2:
        raise ValueError("need at least two samples")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = math.sqrt(float(da @ da)), math.sqrt(float(db @ db))
    if sa == 0.0 or sb == 0.0:
        raise ValueError("zero variance in logits")
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


def pearson_logits(model_a, model_b, X):
    """Correlation of two detectors' logits over the rows of ``X``."""
    return pearson(model_a.decision_function(X), model_b.decision_function(X))


@dataclass
class RobustnessReport:
    tnr: float
    tpr_clean: float
    tpr_fsa: Dict[int, Optional[float]] = field(default_factory=dict)
    j: Optional[float] = None
    rho: Dict[str, float] = field(default_factory=dict)
    aut: Optional[float] = None
    extra: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        rates = [self.tnr, self.tpr_clean, *[v for v in self.tpr_fsa.values() if v is not None]]
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ValueError("rates must lie in [0, 1]")

    def to_dict(self):
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "tnr": self.tnr,
            "tpr_clean": self.tpr_clean,
            "tpr_fsa": {str(b): self.tpr_fsa.get(b) for b in FSA_BUDGETS}
            | {str(b): v for b, v in self.tpr_fsa.items() if b not in FSA_BUDGETS},
            "j": self.j,
            "rho": dict(self.rho),
            "aut": self.aut,
            "extra": dict(self.extra),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != REPORT_FORMAT:
            raise ValueError("not a robustness report")
        if doc.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {doc.get('version')}")
        return cls(
            tnr=doc["tnr"],
            tpr_clean=doc["tpr_clean"],
            tpr_fsa={int(k): v for k, v in doc["tpr_fsa"].items() if v is not None},
            j=doc["j"],
            rho=dict(doc["rho"]),
            aut=doc["aut"],
            extra=dict(doc.get("extra", {})),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def format_table(self):
        def fmt(v):
            return "-" if v is None else f"{v:.4f}"

        rows = [("TNR", fmt(self.tnr)), ("TPR no FSA", fmt(self.tpr_clean))]
        for b in sorted(set(FSA_BUDGETS) | set(self.tpr_fsa)):
            rows.append((f"TPR {b}-FSA", fmt(self.tpr_fsa.get(b))))
        rows.append(("J", fmt(self.j)))
        rows.extend((f"rho[{k}]", fmt(v)) for k, v in sorted(self.rho.items()))
        rows.append(("AUT", fmt(self.aut)))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>8}" for k, v in rows) + "\n"


def assemble_report(y_true, clean_pred, attacked_tpr=None, rho=None, round_f1=None, extra=None):
    """Build a report from clean predictions and per-budget attacked TPRs.

    ``attacked_tpr`` maps budget to TPR-under-attack; budgets missing from
    {25, 50, 100} leave J undefined.
    """
    counts = confusion(clean_pred, y_true)
    attacked = {int(b): float(v) for b, v in (attacked_tpr or {}).items()}
    t_neg, t_pos = tnr(counts), tpr(counts)
    j = None
    if all(b in attacked for b in FSA_BUDGETS):
        j = objective_j(t_neg, t_pos, *(attacked[b] for b in FSA_BUDGETS))
    return RobustnessReport(
        tnr=t_neg,
        tpr_clean=t_pos,
        tpr_fsa=attacked,
        j=j,
        rho=dict(rho or {}),
        aut=None if round_f1 is None else aut(round_f1),
        extra=dict(extra or {}),
    )
