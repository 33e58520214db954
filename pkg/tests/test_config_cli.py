import json
import os

import pytest

from sentinel import cli
from sentinel.config import (PUBLISHED, ConfigError, config_hash, defaults, load_config,
                             parse_override, published_values, write_config)

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

FAST = """
[global]
seed = 3
[data]
dimension = 40
n_samples = 300
malware_ratio = 0.3
n_signature_features = 5
[mlp]
hidden_sizes = 16, 8
dropout = 0.1
epochs = 2
batch_size = 32
[strong]
replay_steps = 2
max_features = 4
[weak]
replay_steps = 2
max_features = 3
[teacher]
n_trees = 5
min_samples_leaf = 5
[anomaly]
n_trees = 10
max_samples = 64
[attack]
budgets = 2
population_size = 6
generations = 2
max_samples = 3
[search]
trials = 2
attack_samples = 2
"""


@pytest.fixture
def fast_ini(tmp_path):
    path = tmp_path / "fast.ini"
    path.write_text(FAST)
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_precedence_flag_over_file_over_default(fast_ini):
    cfg = load_config(fast_ini)
    assert cfg["global"]["seed"] == 3 and cfg["mlp"]["epochs"] == 2
    assert cfg["mlp"]["learning_rate"] == 0.001
    cfg = load_config(fast_ini, ["mlp.epochs=4", "global.seed=9"], seed=11)
    assert cfg["mlp"]["epochs"] == 4 and cfg["global"]["seed"] == 11


def test_unknown_and_invalid_entries(tmp_path, fast_ini):
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(fast_ini, ["mlp.epoch=3"])
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(None, ["net.epochs=3"])
    with pytest.raises(ConfigError):
        load_config(None, ["mlp.dropout=1.0"])
    with pytest.raises(ConfigError):
        load_config(None, ["mlp.epochs=ten"])
    with pytest.raises(ConfigError):
        parse_override("epochs=3")
    bad = tmp_path / "bad.ini"
    bad.write_text("no section header\n")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_shipped_configs_carry_published_defaults_verbatim():
    for name in ("deeptrust.ini", "desk.ini"):
        cfg = load_config(os.path.join(ROOT, "configs", name))
        for (sec, key), value in PUBLISHED.items():
            assert cfg[sec][key] == value, (name, sec, key)
    assert published_values(defaults())["cascade.sigma1"] == 0.78


def test_write_config_round_trips(tmp_path, fast_ini):
    cfg = load_config(fast_ini)
    write_config(cfg, tmp_path / "again.ini")
    again = load_config(str(tmp_path / "again.ini"))
    assert again == cfg and config_hash(again) == config_hash(cfg)


def test_eval_without_model_exits_2(tmp_path, fast_ini, capsys):
    out = tmp_path / "o"
    assert run("eval", "--config", fast_ini, "--out", out) == 2
    assert str(out / "deeptrust.json") in capsys.readouterr().err
    assert run("train", "--config", tmp_path / "none.ini", "--out", out) == 2
    assert run("train", "--config", fast_ini, "--out", out, "mlp.bogus=1") == 2


def test_staged_commands_and_bit_identical_train(tmp_path, fast_ini, capsys):
    out = tmp_path / "o"
    assert run("synth", "--config", fast_ini, "--out", out) == 0
    assert run("train", "--config", fast_ini, "--out", out) == 0
    first = (out / "vanilla.npz").read_bytes()
    manifest = json.loads((out / "manifest-train.json").read_text())
    assert manifest["seeds"]["mlp"] == 3 and "vanilla.npz" in manifest["artifacts"]
    assert run("train", "--config", fast_ini, "--out", out) == 0
    assert (out / "vanilla.npz").read_bytes() == first
    assert run("smooth", "--config", fast_ini, "--out", out) == 0
    assert run("advtrain", "--config", fast_ini, "--out", out, "--role", "strong") == 0
    assert run("advtrain", "--config", fast_ini, "--out", out, "--role", "weak") == 0
    assert run("anomaly", "--config", fast_ini, "--out", out) == 0
    assert run("cascade", "--config", fast_ini, "--out", out) == 0
    doc = json.loads((out / "deeptrust.json").read_text())
    assert doc["conditions"][0]["sigma"] == 0.78
    assert doc["slots"][0] == doc["slots"][2] == "strong.npz"
    assert run("attack", "--config", fast_ini, "--out", out) == 0
    assert run("eval", "--config", fast_ini, "--out", out, "--attack", out / "attack.json",
               "--vanilla", out / "vanilla.npz") == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["rho"]) == {"slot0", "slot1"}
    assert "2" in report["tpr_fsa"] and report["j"] is None
    capsys.readouterr()


def test_pipeline_without_budgets(tmp_path, fast_ini, capsys):
    out = tmp_path / "p"
    assert run("pipeline", "--config", fast_ini, "--out", out, "attack.budgets=") == 0
    report = json.loads((out / "report.json").read_text())
    assert report["j"] is None and all(v is None for v in report["tpr_fsa"].values())
    assert not (out / "attack.json").exists()
    manifest = json.loads((out / "manifest-pipeline.json").read_text())
    assert manifest["published_defaults"]["cascade.sigma1"] == 0.78
    capsys.readouterr()


@pytest.mark.parametrize("stage", [1, 2])
def test_search_command(tmp_path, fast_ini, stage, capsys):
    out = tmp_path / "s"
    assert run("synth", "--config", fast_ini, "--out", out) == 0
    assert run("search", "--config", fast_ini, "--out", out, f"search.stage={stage}") == 0
    doc = json.loads((out / f"search-stage{stage}.json").read_text())
    assert len(doc["trials"]) == 2
    assert doc["objective"] == max(t["objective"] for t in doc["trials"])
    capsys.readouterr()
