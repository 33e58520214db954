"""Staged DeepTrust build from a resolved configuration.

Every stage has a small builder here so the CLI commands and the full
pipeline share one code path. All randomness derives from the global seed:
detectors share ``random_state`` so that trained models differ only through
their training scheme.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os

from . import __version__
from .advtrain import AdversarialMLPDetector
from .anomaly import IsolationForestDetector
from .attack import GaConfig, attack_dataset
from .cascade import build_deeptrust
from .config import config_hash, published_values, to_jsonable
from .features import (FeatureSpace, SynthSpec, read_dataset, save_dataset,
                       synth_generate)
from .metrics import assemble_report, pearson_logits
from .mlp import MLPDetector, split_indices, training_split
from .persistence import save_model
from .teacher import RandomForestTeacher, smooth_dataset

logger = logging.getLogger(__name__)

MLP_KEYS = ("hidden_sizes", "activation", "negative_slope", "dropout", "learning_rate", "beta1",
            "beta2", "epsilon", "weight_decay", "pos_class_weight", "batch_size", "epochs",
            "validation_fraction")


def seeds_of(cfg):
    s = cfg["global"]["seed"]
    return {"data": s, "mlp": s, "teacher": s, "anomaly": s, "attack": s}


def feature_space(cfg):
    return FeatureSpace(cfg["data"]["dimension"])


def load_data(cfg):
    """``(train, test)`` datasets, generated or read from disk."""
    data = cfg["data"]
    if data["source"] == "files":
        train, test = read_dataset(data["train_path"]), read_dataset(data["test_path"])
        for name, ds in (("train", train), ("test", test)):
            if ds.dimension != data["dimension"]:
                raise ValueError(f"{name} data has dimension {ds.dimension}, "
                                 f"config says {data['dimension']}")
        return train, test
    spec = SynthSpec(d=data["dimension"], n_samples=data["n_samples"],
                     malware_ratio=data["malware_ratio"],
                     n_signature_features=data["n_signature_features"],
                     noise_rate=data["noise_rate"])
    full = synth_generate(spec, seeds_of(cfg)["data"])
    train_idx, test_idx = split_indices(full.y, data["test_fraction"], seeds_of(cfg)["data"])
    return full.subset(train_idx), full.subset(test_idx)


def make_vanilla(cfg):
    return MLPDetector(**{k: cfg["mlp"][k] for k in MLP_KEYS}, random_state=seeds_of(cfg)["mlp"])


def make_adversarial(cfg, role):
    sec = cfg[role]
    return AdversarialMLPDetector(
        **{k: cfg["mlp"][k] for k in MLP_KEYS}, random_state=seeds_of(cfg)["mlp"],
        replay_steps=sec["replay_steps"], max_features=sec["max_features"],
        strategy=sec["strategy"], reset_delta=sec["reset_delta"], feature_space=feature_space(cfg))


def fit_teacher(cfg, train):
    """Forest fitted on the detectors' own training split, so validation stays unseen."""
    tr, _ = training_split(train.y, cfg["mlp"]["validation_fraction"], seeds_of(cfg)["mlp"])
    t = cfg["teacher"]
    teacher = RandomForestTeacher(n_trees=t["n_trees"], criterion=t["criterion"],
                                  min_samples_leaf=t["min_samples_leaf"], max_depth=t["max_depth"],
                                  pos_class_weight=t["pos_class_weight"],
                                  random_state=seeds_of(cfg)["teacher"])
    sub = train.subset(tr)
    return teacher.fit(sub.to_csr(), sub.y)


def fit_detector(cfg, role, train, teacher=None):
    """Train ``vanilla``, ``weak`` or ``strong``; smoothing needs a teacher."""
    X = train.to_csr()
    if role == "vanilla":
        return make_vanilla(cfg).fit(X, train.y)
    model = make_adversarial(cfg, role)
    lam = cfg[role]["smoothing"]
    if lam > 0.0:
        if teacher is None:
            raise ValueError(f"{role} detector uses smoothing={lam} but no teacher was given")
        smoothed = smooth_dataset(train, teacher, lam)
        return model.fit(X, smoothed.y, y_select=train.y)
    return model.fit(X, train.y)


def fit_anomaly(cfg, weak, train):
    """Isolation forest on the weak detector's embeddings of benign training samples."""
    a = cfg["anomaly"]
    benign = train.to_csr()[train.y == 0]
    model = IsolationForestDetector(n_trees=a["n_trees"], max_samples=a["max_samples"],
                                    contamination=a["contamination"],
                                    gate_polarity=a["gate_polarity"],
                                    random_state=seeds_of(cfg)["anomaly"])
    return model.fit(weak.transform(benign))


def assemble_cascade(cfg, strong, weak, anomaly):
    c = cfg["cascade"]
    return build_deeptrust(strong, weak, anomaly, sigma1=c["sigma1"], threshold=c["threshold"])


def ga_config(cfg):
    a = cfg["attack"]
    return GaConfig(population_size=a["population_size"], generations=a["generations"],
                    tournament_size=a["tournament_size"], crossover_prob=a["crossover_prob"],
                    mutation_prob=a["mutation_prob"], early_stop=a["early_stop"],
                    seed=seeds_of(cfg)["attack"])


def attack_targets(cfg, test):
    X = test.to_csr()
    malware = X[test.y == 1]
    cap = cfg["attack"]["max_samples"]
    if cap is not None:
        malware = malware[:cap]
    return malware


def run_attacks(cfg, system, train, test):
    malware = attack_targets(cfg, test)
    goodware = train.to_csr()[train.y == 0]
    return attack_dataset(system, malware, goodware, feature_space(cfg),
                          budgets=cfg["attack"]["budgets"], config=ga_config(cfg),
                          threshold=cfg["cascade"]["threshold"])


def correlations(vanilla, peers, train, validation_fraction, seed):
    """Logit correlation of each peer with the vanilla detector on the validation split."""
    _, val = training_split(train.y, validation_fraction, seed)
    X = train.to_csr()[val]
    return {name: pearson_logits(model, vanilla, X) for name, model in peers.items()}


def evaluate(system, test, campaign=None, rho=None, extra=None):
    attacked = None if campaign is None else {b: v for b, v in campaign.tpr.items() if b > 0}
    return assemble_report(test.y, system.predict(test.to_csr()), attacked, rho, extra=extra)


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir, command, cfg, artifacts):
    """Record what produced ``artifacts``; returns the manifest path."""
    doc = {
        "command": command,
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seeds": seeds_of(cfg),
        "published_defaults": published_values(cfg),
        "config": to_jsonable(cfg),
        "artifacts": {os.path.relpath(p, out_dir): file_digest(p) for p in artifacts},
    }
    path = os.path.join(out_dir, f"manifest-{command}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_json(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_pipeline(cfg, out_dir):
    """Build, attack and report on the full three-stage detector.

    Writes every intermediate artifact under ``out_dir`` and returns
    ``(report, artifact paths)``.
    """
    os.makedirs(out_dir, exist_ok=True)
    path = lambda name: os.path.join(out_dir, name)  # noqa: E731
    train, test = load_data(cfg)
    save_dataset(train, path("train.txt"))
    save_dataset(test, path("test.txt"))
    logger.info("data: %d train, %d test", len(train), len(test))

    teacher = fit_teacher(cfg, train)
    save_model(teacher, path("teacher.npz"))
    strong = fit_detector(cfg, "strong", train, teacher)
    save_model(strong, path("strong.npz"))
    weak = fit_detector(cfg, "weak", train, teacher)
    save_model(weak, path("weak.npz"))
    vanilla = fit_detector(cfg, "vanilla", train)
    save_model(vanilla, path("vanilla.npz"))
    anomaly = fit_anomaly(cfg, weak, train)
    save_model(anomaly, path("anomaly.npz"))
    system = assemble_cascade(cfg, strong, weak, anomaly)
    save_model(system, path("deeptrust.json"),
               refs=[(strong, path("strong.npz")), (weak, path("weak.npz")),
                     (anomaly, path("anomaly.npz"))])
    logger.info("models trained")

    campaign = run_attacks(cfg, system, train, test) if cfg["attack"]["budgets"] else None
    if campaign is not None:
        write_json(campaign.to_dict(), path("attack.json"))
    rho = correlations(vanilla, {"strong": strong, "weak": weak}, train,
                       cfg["mlp"]["validation_fraction"], seeds_of(cfg)["mlp"])
    extra = {"n_train": len(train), "n_test": len(test),
             "n_attacked": int(attack_targets(cfg, test).shape[0])}
    report = evaluate(system, test, campaign, rho, extra)
    with open(path("report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    with open(path("report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.format_table())

    names = ["train.txt", "test.txt", "teacher.npz", "strong.npz", "weak.npz", "vanilla.npz",
             "anomaly.npz", "deeptrust.json", "report.json", "report.txt"]
    if campaign is not None:
        names.insert(-2, "attack.json")
    artifacts = [path(n) for n in names]
    artifacts.append(write_manifest(out_dir, "pipeline", cfg, artifacts))
    return report, artifacts
