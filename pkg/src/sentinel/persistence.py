"""Versioned on-disk container for detectors, forests and cascades.

Array-backed models (``mlp``, ``forest``, ``iforest``) are ``.npz`` archives
holding a JSON ``__meta__`` entry next to float64/int64 arrays. Cascades are
JSON documents that reference model files by path relative to themselves;
slots naming the same path load as one shared object.
"""
from __future__ import annotations

import json
import os
import zipfile

import numpy as np

from .advtrain import AdversarialMLPDetector
from .anomaly import IsolationForestDetector, IsolationTree
from .cascade import Cascade, InlierGate, condition_from_dict
from .features import FeatureSpace
from .mlp import MLPDetector, Network
from .teacher import PresenceTree, RandomForestTeacher

FORMAT = "sentinel-model"
VERSION = 1
KINDS = ("mlp", "forest", "iforest", "cascade")


class ModelFormatError(ValueError):
    pass


class CorruptModelError(ModelFormatError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class ModelKindError(ModelFormatError):
    pass


def _kind_of(model):
    if isinstance(model, MLPDetector):
        return "mlp"
    if isinstance(model, RandomForestTeacher):
        return "forest"
    if isinstance(model, IsolationForestDetector):
        return "iforest"
    if isinstance(model, Cascade):
        return "cascade"
    raise ModelKindError(f"cannot persist {type(model).__name__}")


def _jsonable_params(model):
    params = {}
    for k, v in model.get_params(deep=False).items():
        if k == "monitor":
            continue
        if isinstance(v, FeatureSpace):
            v = {"__feature_space__": v.to_dict()}
        elif isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, np.ndarray):
            v = v.tolist()
        params[k] = v
    return params


def _restore_params(params):
    out = {}
    for k, v in params.items():
        if isinstance(v, dict) and "__feature_space__" in v:
            v = FeatureSpace.from_dict(v["__feature_space__"])
        elif k == "hidden_sizes":
            v = tuple(v)
        out[k] = v
    return out


def _pack_trees(trees, fields):
    offsets = np.cumsum([0] + [t.feature.shape[0] for t in trees]).astype(np.int64)
    arrays = {"offsets": offsets}
    for f in fields:
        arrays[f] = np.concatenate([getattr(t, f) for t in trees])
    return arrays


def _unpack_trees(arrays, fields, cls):
    off = arrays["offsets"]
    return [cls(**{f: arrays[f][off[i]:off[i + 1]].copy() for f in fields})
            for i in range(off.shape[0] - 1)]


_FOREST_FIELDS = ("feature", "left", "right", "value")
_IFOREST_FIELDS = ("feature", "threshold", "left", "right", "size", "depth")


def _state(model, kind):
    meta = {"format": FORMAT, "version": VERSION, "kind": kind,
            "class": type(model).__name__, "params": _jsonable_params(model)}
    arrays = {}
    if kind == "mlp":
        net = model.network_
        meta["network"] = {"activation": net.activation, "negative_slope": net.negative_slope,
                           "n_layers": len(net.weights)}
        meta["fit"] = {"validation_f1": model.validation_f1_, "best_epoch": model.best_epoch_,
                       "history": list(model.history_)}
        for i, (W, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"W{i}"] = W
            arrays[f"b{i}"] = b
        if isinstance(model, AdversarialMLPDetector):
            arrays["delta"] = model.delta_.astype(np.int64)
    elif kind == "forest":
        meta["n_features_in"] = model.n_features_in_
        arrays.update(_pack_trees(model.trees_, _FOREST_FIELDS))
    elif kind == "iforest":
        meta["n_features_in"] = model.n_features_in_
        meta["threshold"] = model.threshold_
        meta["subsample_size"] = model.subsample_size_
        arrays.update(_pack_trees(model.trees_, _IFOREST_FIELDS))
    return meta, arrays


def save_model(model, path, refs=None):
    """Write ``model`` to ``path``.

    Cascades need ``refs``: a list of ``(model, path)`` pairs locating every
    detector and anomaly model on disk.
    """
    kind = _kind_of(model)
    if kind == "cascade":
        return _save_cascade(model, path, refs or [])
    meta, arrays = _state(model, kind)
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8),
              **arrays}
    # fixed entry timestamps keep identical models byte-identical on disk
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asarray(arr), allow_pickle=False)


def _anomaly_models(conditions):
    for c in conditions:
        if isinstance(c, InlierGate):
            yield c.anomaly
        yield from _anomaly_models(getattr(c, "conditions", ()))


def _save_cascade(cascade, path, refs):
    base = os.path.dirname(os.path.abspath(path))
    names = {}
    for obj, p in refs:
        names[id(obj)] = os.path.relpath(os.path.abspath(p), base)
    missing = [i for i, d in enumerate(cascade.detectors) if id(d) not in names]
    if missing:
        raise ModelFormatError(f"no file reference for cascade slot(s) {missing}")
    if any(id(a) not in names for a in _anomaly_models(cascade.conditions)):
        raise ModelFormatError("no file reference for a gate's anomaly model")
    doc = {
        "format": FORMAT, "version": VERSION, "kind": "cascade",
        "slots": [names[id(d)] for d in cascade.detectors],
        "conditions": [c.to_dict(names) for c in cascade.conditions],
        "threshold": cascade.threshold,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _check_header(meta, path, kind):
    if not isinstance(meta, dict) or meta.get("format") != FORMAT:
        raise CorruptModelError(f"{path}: not a {FORMAT} file")
    if meta.get("version") != VERSION:
        raise ModelVersionError(f"{path}: unsupported version {meta.get('version')!r}, "
                                f"expected {VERSION}")
    if meta.get("kind") not in KINDS:
        raise CorruptModelError(f"{path}: unknown kind {meta.get('kind')!r}")
    if kind is not None and meta["kind"] != kind:
        raise ModelKindError(f"{path}: expected a {kind} model, found {meta['kind']}")


def load_model(path, kind=None, _cache=None):
    """Load any persisted model; ``kind`` optionally enforces its type."""
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head[:1] == b"{":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CorruptModelError(f"{path}: corrupt cascade document ({exc})") from exc
        _check_header(doc, path, kind)
        return _load_cascade(doc, path, _cache if _cache is not None else {})
    if head != b"PK":
        raise CorruptModelError(f"{path}: unrecognised file")
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (zipfile.BadZipFile, ValueError, EOFError, OSError, KeyError) as exc:
        raise CorruptModelError(f"{path}: corrupt model archive ({exc})") from exc
    if "__meta__" not in arrays:
        raise CorruptModelError(f"{path}: missing metadata")
    try:
        meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModelError(f"{path}: corrupt metadata") from exc
    _check_header(meta, path, kind)
    return _from_state(meta, arrays)


def _from_state(meta, arrays):
    kind = meta["kind"]
    params = _restore_params(meta["params"])
    if kind == "mlp":
        cls = AdversarialMLPDetector if meta["class"] == "AdversarialMLPDetector" else MLPDetector
        model = cls(**params)
        n = meta["network"]["n_layers"]
        model.network_ = Network([arrays[f"W{i}"] for i in range(n)],
                                 [arrays[f"b{i}"] for i in range(n)],
                                 meta["network"]["activation"], meta["network"]["negative_slope"])
        model.validation_f1_ = meta["fit"]["validation_f1"]
        model.best_epoch_ = meta["fit"]["best_epoch"]
        model.history_ = meta["fit"]["history"]
        model.n_features_in_ = model.network_.n_features
        model.classes_ = np.array([0, 1])
        if "delta" in arrays:
            model.delta_ = arrays["delta"].astype(np.int8)
        return model
    if kind == "forest":
        model = RandomForestTeacher(**params)
        model.trees_ = _unpack_trees(arrays, _FOREST_FIELDS, PresenceTree)
        model.n_features_in_ = meta["n_features_in"]
        model.classes_ = np.array([0, 1])
        return model
    model = IsolationForestDetector(**params)
    model.trees_ = _unpack_trees(arrays, _IFOREST_FIELDS, IsolationTree)
    model.n_features_in_ = meta["n_features_in"]
    model.threshold_ = meta["threshold"]
    model.subsample_size_ = meta["subsample_size"]
    return model


def _load_cascade(doc, path, cache):
    base = os.path.dirname(os.path.abspath(path))

    def get(rel):
        full = os.path.normpath(os.path.join(base, rel))
        if full not in cache:
            if not os.path.exists(full):
                raise FileNotFoundError(f"{path}: referenced model {full} not found")
            cache[full] = load_model(full, _cache=cache)
        return cache[full]

    detectors = [get(rel) for rel in doc["slots"]]
    anomaly = {}

    def collect(c):
        if c["type"] == "inlier_gate":
            anomaly[c["anomaly"]] = get(c["anomaly"])
        for sub in c.get("conditions", ()):
            collect(sub)

    for c in doc["conditions"]:
        collect(c)
    conditions = tuple(condition_from_dict(c, anomaly) for c in doc["conditions"])
    return Cascade(detectors, conditions, float(doc["threshold"])).fit()
