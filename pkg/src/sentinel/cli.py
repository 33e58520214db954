"""``sentinel <command> --config <path> [--seed N] [--out DIR] [section.key=value ...]``

Exit status is 0 on success, 2 when inputs or configuration are invalid and
1 on any other failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import pipeline as pl
from .config import ConfigError, load_config
from .features import SparseFormatError, read_dataset, save_dataset
from .metrics import confusion, objective_j, pearson_logits, tnr, tpr
from .mlp import MLPDetector, training_split
from .persistence import ModelFormatError, load_model, save_model
from .search import STAGE1_SPACE, STAGE2_SPACE, random_search
from .teacher import smooth_dataset

logger = logging.getLogger("sentinel")


class InputError(Exception):
    """Missing or unusable command input."""


def _need(path):
    if not os.path.exists(path):
        raise InputError(f"missing file: {path}")
    return path


def _input(args, flag, default_name):
    value = getattr(args, flag, None)
    return _need(value if value else os.path.join(args.out, default_name))


def _train_data(args, cfg):
    if getattr(args, "data", None):
        return read_dataset(_need(args.data))
    if cfg["data"]["source"] == "files":
        return read_dataset(_need(cfg["data"]["train_path"]))
    return read_dataset(_need(os.path.join(args.out, "train.txt")))


def _test_data(args, cfg):
    if getattr(args, "data", None):
        return read_dataset(_need(args.data))
    if cfg["data"]["source"] == "files":
        return read_dataset(_need(cfg["data"]["test_path"]))
    return read_dataset(_need(os.path.join(args.out, "test.txt")))


def _finish(args, cfg, command, artifacts):
    manifest = pl.write_manifest(args.out, command, cfg, artifacts)
    for p in artifacts + [manifest]:
        print(p)
    return 0


def cmd_synth(args, cfg):
    train, test = pl.load_data(cfg)
    paths = [os.path.join(args.out, n) for n in ("train.txt", "test.txt")]
    save_dataset(train, paths[0])
    save_dataset(test, paths[1])
    return _finish(args, cfg, "synth", paths)


def cmd_smooth(args, cfg):
    train = _train_data(args, cfg)
    teacher = pl.fit_teacher(cfg, train)
    paths = [os.path.join(args.out, n) for n in ("teacher.npz", "smoothed.txt")]
    save_model(teacher, paths[0])
    save_dataset(smooth_dataset(train, teacher, cfg["strong"]["smoothing"]), paths[1])
    return _finish(args, cfg, "smooth", paths)


def cmd_train(args, cfg):
    model = pl.fit_detector(cfg, "vanilla", _train_data(args, cfg))
    path = os.path.join(args.out, "vanilla.npz")
    save_model(model, path)
    return _finish(args, cfg, "train", [path])


def cmd_advtrain(args, cfg):
    train = _train_data(args, cfg)
    teacher = None
    if cfg[args.role]["smoothing"] > 0.0:
        teacher = load_model(_input(args, "teacher", "teacher.npz"), kind="forest")
    model = pl.fit_detector(cfg, args.role, train, teacher)
    path = os.path.join(args.out, f"{args.role}.npz")
    save_model(model, path)
    return _finish(args, cfg, f"advtrain-{args.role}", [path])


def cmd_anomaly(args, cfg):
    weak = load_model(_input(args, "model", "weak.npz"), kind="mlp")
    model = pl.fit_anomaly(cfg, weak, _train_data(args, cfg))
    path = os.path.join(args.out, "anomaly.npz")
    save_model(model, path)
    return _finish(args, cfg, "anomaly", [path])


def cmd_cascade(args, cfg):
    paths = {name: _input(args, name, f"{name}.npz") for name in ("strong", "weak", "anomaly")}
    strong = load_model(paths["strong"], kind="mlp")
    weak = load_model(paths["weak"], kind="mlp")
    anomaly = load_model(paths["anomaly"], kind="iforest")
    system = pl.assemble_cascade(cfg, strong, weak, anomaly)
    path = os.path.join(args.out, "deeptrust.json")
    save_model(system, path, refs=[(strong, paths["strong"]), (weak, paths["weak"]),
                                   (anomaly, paths["anomaly"])])
    return _finish(args, cfg, "cascade", [path])


def cmd_attack(args, cfg):
    system = load_model(_input(args, "model", "deeptrust.json"))
    train = read_dataset(_input(args, "train", "train.txt"))
    test = _test_data(args, cfg)
    campaign = pl.run_attacks(cfg, system, train, test)
    path = os.path.join(args.out, "attack.json")
    pl.write_json(campaign.to_dict(), path)
    return _finish(args, cfg, "attack", [path])


def cmd_eval(args, cfg):
    from .attack import AttackCampaign

    system = load_model(_input(args, "model", "deeptrust.json"))
    test = _test_data(args, cfg)
    campaign = None
    if args.attack:
        with open(_need(args.attack), encoding="utf-8") as fh:
            campaign = AttackCampaign.from_dict(json.load(fh))
    rho = None
    if args.vanilla:
        vanilla = load_model(_need(args.vanilla), kind="mlp")
        if isinstance(system, MLPDetector):
            peers = {"model": system}
        else:
            # aliased slots share one model; report it under its first slot
            peers, seen = {}, set()
            for i, d in enumerate(system.detectors):
                if isinstance(d, MLPDetector) and id(d) not in seen:
                    seen.add(id(d))
                    peers[f"slot{i}"] = d
        rho = {name: pearson_logits(m, vanilla, test.to_csr()) for name, m in peers.items()}
    report = pl.evaluate(system, test, campaign, rho, {"n_test": len(test)})
    path = os.path.join(args.out, "report.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    sys.stdout.write(report.format_table())
    return _finish(args, cfg, "eval", [path])


def cmd_pipeline(args, cfg):
    report, artifacts = pl.run_pipeline(cfg, args.out)
    sys.stdout.write(report.format_table())
    for p in artifacts:
        print(p)
    return 0


def _stage1_objective(cfg, train):
    X, y = train.to_csr(), train.y

    def objective(p):
        model = pl.make_vanilla(cfg).set_params(hidden_sizes=(p["hidden"],) * p["n_layers"],
                                                activation=p["activation"], dropout=p["dropout"])
        return model.fit(X, y).validation_f1_

    return objective


def _stage2_objective(cfg, train):
    from .attack import attack_dataset

    X, y = train.to_csr(), train.y
    tr, val = training_split(y, cfg["mlp"]["validation_fraction"], pl.seeds_of(cfg)["mlp"])
    Xv, yv = X[val], y[val]
    malware = Xv[yv == 1][:cfg["search"]["attack_samples"]]
    goodware = X[tr][y[tr] == 0]

    def objective(p):
        model = pl.make_adversarial(cfg, "weak").set_params(**p).fit(X, y)
        counts = confusion(model.predict(Xv), yv)
        camp = attack_dataset(model, malware, goodware, pl.feature_space(cfg), (25, 50, 100),
                              pl.ga_config(cfg))
        return objective_j(tnr(counts), tpr(counts), camp.tpr[25], camp.tpr[50], camp.tpr[100])

    return objective


def cmd_search(args, cfg):
    train = _train_data(args, cfg)
    stage = cfg["search"]["stage"]
    space, objective = ((STAGE1_SPACE, _stage1_objective(cfg, train)) if stage == 1
                        else (STAGE2_SPACE, _stage2_objective(cfg, train)))
    best, value, log = random_search(space, objective, cfg["search"]["trials"],
                                     cfg["global"]["seed"])
    path = os.path.join(args.out, f"search-stage{stage}.json")
    pl.write_json({"stage": stage, "best": best, "objective": value, "trials": log}, path)
    return _finish(args, cfg, f"search-stage{stage}", [path])


COMMANDS = {
    "synth": (cmd_synth, "generate synthetic train/test data"),
    "smooth": (cmd_smooth, "fit the forest teacher and write smoothed labels"),
    "train": (cmd_train, "train the vanilla detector"),
    "advtrain": (cmd_advtrain, "adversarially train the strong or weak detector"),
    "anomaly": (cmd_anomaly, "fit the isolation forest on benign embeddings"),
    "cascade": (cmd_cascade, "assemble the three-stage detector"),
    "attack": (cmd_attack, "run the genetic evasion attack"),
    "eval": (cmd_eval, "write a robustness report"),
    "pipeline": (cmd_pipeline, "run every stage end to end"),
    "search": (cmd_search, "random hyperparameter search"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sentinel", description="Multi-step adversarially robust malware detection.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--seed", type=int, help="global seed (overrides the config)")
        p.add_argument("--out", default="out", help="artifact directory (default: out)")
        p.add_argument("-v", "--verbose", action="store_true")
        p.add_argument("overrides", nargs="*", metavar="section.key=value")
        if name in ("smooth", "train", "advtrain", "anomaly", "search", "attack", "eval"):
            p.add_argument("--data", help="input dataset (sparse text format)")
        if name == "advtrain":
            p.add_argument("--role", choices=("strong", "weak"), default="weak")
            p.add_argument("--teacher", help="forest teacher for label smoothing")
        if name in ("anomaly", "attack", "eval"):
            p.add_argument("--model", help="model file")
        if name == "cascade":
            for role in ("strong", "weak", "anomaly"):
                p.add_argument(f"--{role}", help=f"{role} model file")
        if name == "attack":
            p.add_argument("--train", help="training data supplying the goodware pool")
        if name == "eval":
            p.add_argument("--attack", help="attack results to include")
            p.add_argument("--vanilla", help="vanilla detector for logit correlations")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config is not None:
            _need(args.config)
        cfg = load_config(args.config, args.overrides, args.seed)
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command][0](args, cfg)
    except (InputError, FileNotFoundError, ConfigError, ModelFormatError, SparseFormatError,
            ValueError) as exc:
        print(f"sentinel {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"sentinel {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
