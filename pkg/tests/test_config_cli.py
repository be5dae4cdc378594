import csv
import json

import pytest

from dpla.cli import cache_path, main
from dpla.config import PRESETS, ConfigError, config_to_yaml, parse_config, parse_config_text
from dpla.datagen import Regime


def test_cifar10_preset():
    cfg = parse_config_text("preset: cifar10-like\n")
    a = cfg.adjust
    assert (a.tau_1, a.tau_2, a.alpha, a.beta, a.rho, a.lambda_1, a.lambda_2) == (2, 2, 1.2, 0.8, 0.5, 0.5, 0.5)
    assert (cfg.dataset.N_1, cfg.dataset.H_1, cfg.dataset.M_1) == (500, 4000, 4500)
    assert cfg.optimizer == "sgd"


def test_cifar100_preset():
    a = parse_config_text("preset: cifar100-like").adjust
    assert (a.tau_1, a.tau_2, a.alpha, a.beta) == (1, 1, 1.05, 0.95)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_resolves(name):
    cfg = parse_config_text(f"preset: {name}")
    assert cfg.dataset.c_t >= 2


def test_explicit_keys_override_preset(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("preset: svhn-like\nepochs: 4\ndataset:\n  regime: reversed\nadjust:\n  tau_1: 0.5\n")
    cfg = parse_config(p, {"seed": 9})
    assert cfg.epochs == 4 and cfg.seed == 9 and cfg.dataset.seed == 9
    assert cfg.dataset.regime is Regime.REVERSED
    assert cfg.adjust.tau_1 == 0.5 and cfg.adjust.tau_2 == 2.0


@pytest.mark.parametrize(
    "text,match",
    [
        ("seed: 1\nadjust:\n  tau_1: -1\n", r":3: key 'adjust.tau_1' must be > 0"),
        ("epochs: 2\nbogus: 1\n", r":2: unknown key 'bogus'"),
        ("dataset:\n  colour: red\n", r":2: unknown key 'dataset.colour'"),
        ("epochs: two\n", r":1: key 'epochs' must be int"),
        ("baseline_mode: 1\n", r"baseline_mode"),
        ("adjust:\n  alpha: 0.5\n", r"adjust.alpha"),
        ("preset: imagenet\n", r"unknown preset"),
        ("dataset:\n  regime: sideways\n", r"dataset.regime"),
        ("- a\n- b\n", r"mapping"),
    ],
)
def test_parse_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text)


def test_yaml_round_trip():
    cfg = parse_config_text("preset: cifar100-like\nseed: 3\n")
    assert parse_config_text(config_to_yaml(cfg)) == cfg


def test_check_grads_command(capsys):
    assert main(["check-grads"]) == 0
    out = capsys.readouterr().out
    worst = float(out.strip().splitlines()[-1].split()[3])
    assert worst <= 1e-5


def _small_yaml(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(
        "epochs: 2\nbatch_size: 64\nhidden_dim: 16\nembed_dim: 8\ntest_per_class: 20\n"
        "dataset:\n  N_1: 20\n  H_1: 100\n  M_1: 100\n  gamma_l: 5\n  gamma_u: 5\n"
    )
    return p


def test_run_export_round_trip(tmp_path, capsys):
    out = tmp_path / "run"
    cfg = _small_yaml(tmp_path)
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    records = (out / "metrics.jsonl").read_text().splitlines()
    assert len(records) == 2
    assert (out / "model.ckpt").is_file() and (out / "manifest.yaml").is_file()
    assert main(["export", "--out", str(out)]) == 0
    with open(out / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "known_acc", "novel_acc", "all_acc", "novel_nmi", "all_nmi"]
    for row, rec in zip(rows[1:], records):
        data = json.loads(rec)
        assert row == [str(data["epoch"])] + [f"{data[k]:.6f}" for k in rows[0][1:]]
    assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0


def test_run_smallest_preset_one_epoch(tmp_path):
    out = tmp_path / "toy"
    assert main(["run", "--preset", "toy", "--epochs", "1", "--out", str(out)]) == 0
    assert len((out / "metrics.jsonl").read_text().splitlines()) == 1


def test_gen_data_then_cache_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DPLA_CACHE_DIR", str(tmp_path / "shared"))
    cfg = _small_yaml(tmp_path)
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    files = list((tmp_path / "shared").iterdir())
    assert len(files) == 1 and files[0].name.startswith("dataset-")


def test_eval_missing_checkpoint(tmp_path, capsys):
    out = tmp_path / "none"
    assert main(["eval", "--out", str(out), "--checkpoint", str(tmp_path / "missing.ckpt")]) != 0
    assert "not found" in capsys.readouterr().err
    assert not out.exists()


def test_eval_missing_cache(tmp_path):
    out = tmp_path / "run"
    cfg = _small_yaml(tmp_path)
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    from dpla.config import parse_config as pc
    cache_path(pc(cfg), out).unlink()
    assert main(["eval", "--config", str(cfg), "--out", str(out)]) != 0


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("adjust:\n  tau_1: -1\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "x")]) == 1
    assert "tau_1" in capsys.readouterr().err


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "configs"
    paths = sorted(root.glob("*.yaml"))
    assert paths
    for p in paths:
        parse_config(p)
    assert parse_config(root / "full-reference.yaml") == parse_config_text("preset: toy")
