"""Experiment configuration: INI files over typed defaults.

Every known key has a type and a default. Values resolve with the
precedence command-line override > file > default, and unknown sections or
keys are rejected so typos fail loudly. The defaults are the final
DeepTrust configuration (hidden sizes, dropout, optimiser, loss weight,
per-model adversarial settings and gate thresholds).
"""
from __future__ import annotations

import configparser
import copy
import hashlib
import json


class ConfigError(ValueError):
    pass


def _ints(text):
    text = text.strip().strip("()[]")
    if not text:
        return ()
    return tuple(int(t) for t in text.replace(",", " ").split())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    low = text.strip().lower()
    return None if low in ("", "none") else int(low)


def _str(text):
    return text.strip()


# section -> key -> (parser, default)
SCHEMA = {
    "global": {
        "seed": (int, 0),
    },
    "data": {
        "source": (_str, "synth"),
        "train_path": (_str, ""),
        "test_path": (_str, ""),
        "dimension": (int, 200),
        "n_samples": (int, 2500),
        "malware_ratio": (float, 0.1),
        "n_signature_features": (int, 15),
        "noise_rate": (float, 0.02),
        "test_fraction": (float, 0.2),
    },
    "mlp": {
        "hidden_sizes": (_ints, (256, 32, 256)),
        "activation": (_str, "leaky_relu"),
        "negative_slope": (float, 0.01),
        "dropout": (float, 0.70),
        "learning_rate": (float, 0.001),
        "beta1": (float, 0.99),
        "beta2": (float, 0.999),
        "epsilon": (float, 1e-8),
        "weight_decay": (float, 0.00246),
        "pos_class_weight": (float, 8.5),
        "batch_size": (int, 32),
        "epochs": (int, 10),
        "validation_fraction": (float, 0.2),
    },
    "strong": {
        "replay_steps": (int, 10),
        "max_features": (int, 100),
        "strategy": (_str, "topk"),
        "reset_delta": (_bool, False),
        "smoothing": (float, 0.5),
    },
    "weak": {
        "replay_steps": (int, 2),
        "max_features": (int, 75),
        "strategy": (_str, "topk"),
        "reset_delta": (_bool, False),
        "smoothing": (float, 0.0),
    },
    "teacher": {
        "n_trees": (int, 60),
        "criterion": (_str, "gini"),
        "min_samples_leaf": (int, 50),
        "max_depth": (_opt_int, None),
        "pos_class_weight": (float, 1.0),
    },
    "anomaly": {
        "n_trees": (int, 100),
        "max_samples": (int, 256),
        "contamination": (float, 0.14),
        "gate_polarity": (_str, "inlier"),
    },
    "cascade": {
        "sigma1": (float, 0.78),
        "threshold": (float, 0.5),
    },
    "attack": {
        "budgets": (_ints, (25, 50, 100)),
        "population_size": (int, 100),
        "generations": (int, 50),
        "tournament_size": (int, 3),
        "crossover_prob": (float, 0.7),
        "mutation_prob": (float, 1.0),
        "early_stop": (_bool, True),
        "max_samples": (_opt_int, None),
    },
    "search": {
        "stage": (int, 1),
        "trials": (int, 20),
        "attack_samples": (int, 20),
    },
}

# (section, key) pairs pinned by the published DeepTrust configuration
PUBLISHED = {
    ("mlp", "hidden_sizes"): (256, 32, 256),
    ("mlp", "activation"): "leaky_relu",
    ("mlp", "dropout"): 0.70,
    ("mlp", "batch_size"): 32,
    ("mlp", "epochs"): 10,
    ("mlp", "learning_rate"): 0.001,
    ("mlp", "weight_decay"): 0.00246,
    ("mlp", "pos_class_weight"): 8.5,
    ("strong", "replay_steps"): 10,
    ("strong", "max_features"): 100,
    ("strong", "strategy"): "topk",
    ("strong", "smoothing"): 0.5,
    ("weak", "replay_steps"): 2,
    ("weak", "max_features"): 75,
    ("weak", "strategy"): "topk",
    ("weak", "smoothing"): 0.0,
    ("cascade", "sigma1"): 0.78,
    ("anomaly", "contamination"): 0.14,
    ("cascade", "threshold"): 0.5,
}


def defaults():
    return {sec: {k: copy.copy(v[1]) for k, v in keys.items()} for sec, keys in SCHEMA.items()}


def _coerce(section, key, text):
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in [{section}]")
    try:
        return SCHEMA[section][key][0](text)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def parse_override(text):
    """``section.key=value`` into ``(section, key, value-text)``."""
    name, sep, value = text.partition("=")
    section, dot, key = name.strip().partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    return section, key, value


def load_config(path=None, overrides=(), seed=None):
    """Resolve the configuration; ``seed`` wins over both file and overrides."""
    cfg = defaults()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in parser.sections():
            for key, text in parser.items(section):
                cfg.setdefault(section, {})[key] = _coerce(section, key, text)
    for item in overrides:
        section, key, text = parse_override(item)
        cfg[section][key] = _coerce(section, key, text)
    if seed is not None:
        cfg["global"]["seed"] = int(seed)
    validate(cfg)
    return cfg


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate(cfg):
    data, mlp, att = cfg["data"], cfg["mlp"], cfg["attack"]
    _require(data["source"] in ("synth", "files"), "data.source must be synth or files")
    if data["source"] == "files":
        _require(bool(data["train_path"]) and bool(data["test_path"]),
                 "data.source=files needs train_path and test_path")
    _require(data["dimension"] >= 1, "data.dimension must be >= 1")
    _require(0.0 < data["test_fraction"] < 1.0, "data.test_fraction must lie in (0, 1)")
    _require(len(mlp["hidden_sizes"]) >= 1 and min(mlp["hidden_sizes"]) >= 1,
             "mlp.hidden_sizes must be positive")
    _require(mlp["activation"] in ("relu", "leaky_relu"), "mlp.activation must be relu or leaky_relu")
    _require(0.0 <= mlp["dropout"] < 1.0, "mlp.dropout must lie in [0, 1)")
    _require(mlp["learning_rate"] > 0, "mlp.learning_rate must be > 0")
    _require(mlp["weight_decay"] >= 0, "mlp.weight_decay must be >= 0")
    _require(mlp["pos_class_weight"] > 0, "mlp.pos_class_weight must be > 0")
    _require(mlp["batch_size"] >= 1 and mlp["epochs"] >= 0, "mlp batch_size/epochs out of range")
    _require(0.0 < mlp["validation_fraction"] < 1.0, "mlp.validation_fraction must lie in (0, 1)")
    for name in ("strong", "weak"):
        sec = cfg[name]
        _require(sec["replay_steps"] >= 1, f"{name}.replay_steps must be >= 1")
        _require(1 <= sec["max_features"] <= data["dimension"],
                 f"{name}.max_features must lie in [1, dimension]")
        _require(sec["strategy"] in ("topk", "random"), f"{name}.strategy must be topk or random")
        _require(0.0 <= sec["smoothing"] <= 1.0, f"{name}.smoothing must lie in [0, 1]")
    _require(cfg["teacher"]["criterion"] in ("gini", "entropy"), "teacher.criterion must be gini or entropy")
    _require(cfg["teacher"]["n_trees"] >= 1 and cfg["teacher"]["min_samples_leaf"] >= 1,
             "teacher n_trees/min_samples_leaf must be >= 1")
    an = cfg["anomaly"]
    _require(0.0 < an["contamination"] <= 0.5, "anomaly.contamination must lie in (0, 0.5]")
    _require(an["max_samples"] >= 2 and an["n_trees"] >= 1, "anomaly n_trees/max_samples out of range")
    _require(an["gate_polarity"] in ("inlier", "anomalous"), "anomaly.gate_polarity must be inlier or anomalous")
    for key in ("sigma1", "threshold"):
        _require(0.0 <= cfg["cascade"][key] <= 1.0, f"cascade.{key} must lie in [0, 1]")
    _require(all(b >= 0 for b in att["budgets"]), "attack.budgets must be >= 0")
    _require(att["population_size"] >= 2, "attack.population_size must be >= 2")
    _require(1 <= att["tournament_size"] <= att["population_size"],
             "attack.tournament_size must lie in [1, population_size]")
    _require(att["generations"] >= 0, "attack.generations must be >= 0")
    for key in ("crossover_prob", "mutation_prob"):
        _require(0.0 <= att[key] <= 1.0, f"attack.{key} must lie in [0, 1]")
    _require(cfg["search"]["trials"] >= 1, "search.trials must be >= 1")
    _require(cfg["search"]["stage"] in (1, 2), "search.stage must be 1 or 2")
    return cfg


def to_jsonable(cfg):
    return {sec: {k: list(v) if isinstance(v, tuple) else v for k, v in keys.items()}
            for sec, keys in cfg.items()}


def config_hash(cfg):
    blob = json.dumps(to_jsonable(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def published_values(cfg):
    """The published-configuration entries as they stand in ``cfg``."""
    out = {}
    for (sec, key) in PUBLISHED:
        v = cfg[sec][key]
        out[f"{sec}.{key}"] = list(v) if isinstance(v, tuple) else v
    return out


def write_config(cfg, path):
    parser = configparser.ConfigParser(interpolation=None)
    for sec, keys in cfg.items():
        parser[sec] = {}
        for k, v in keys.items():
            if isinstance(v, tuple):
                v = ", ".join(str(i) for i in v)
            elif v is None:
                v = "none"
            parser[sec][k] = str(v)
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
