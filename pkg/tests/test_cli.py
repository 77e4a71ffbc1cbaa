import json
import os

import pytest

from conftest import tiny_run
from mhn.cli import EXIT_CONTRACT, EXIT_IO, EXIT_OK, main


def write_config(path, run):
    path.write_text(json.dumps(run.to_dict()))
    return str(path)


@pytest.fixture(scope="module")
def trained(tiny_data, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "run.json", tiny_run(tiny_data, root / "ignored", epochs=2))
    out = root / "train"
    assert main(["train", "--config", cfg, "--out", str(out), "--seed", "3"]) == EXIT_OK
    return root, cfg, out


def test_train_writes_metrics_checkpoint_and_figure(trained, capsys):
    _, _, out = trained
    summary = json.loads((out / "summary.json").read_text())
    lines = [json.loads(x) for x in (out / "metrics.jsonl").read_text().splitlines()]
    assert [e["epoch"] for e in lines if "train_loss" in e][:2] == [1, 2]
    assert os.path.exists(summary["checkpoint"])
    assert (out / "curves.png").read_bytes()[:4] == b"\x89PNG"


def test_seed_override_reaches_run(trained):
    _, _, out = trained
    assert json.loads((out / "config.json").read_text())["seed"] == 3


def test_eval_appends_jsonl(trained, tiny_data, capsys):
    root, _, out = trained
    ckpt = json.loads((out / "summary.json").read_text())["checkpoint"]
    for split in ("val", "test"):
        assert main(["eval", "--checkpoint", ckpt, "--data", tiny_data, "--split", split,
                     "--out", str(root / "ev")]) == EXIT_OK
    rows = [json.loads(x) for x in (root / "ev" / "eval.jsonl").read_text().splitlines()]
    assert [r["split"] for r in rows] == ["val", "test"]
    assert "accuracy=" in capsys.readouterr().out


def test_ablate_writes_table_and_figure(trained, tmp_path, capsys):
    _, cfg, _ = trained
    out = tmp_path / "abl"
    assert main(["ablate", "--config", cfg, "--axis", "no_recurrence", "--seeds", "0,1",
                 "--epochs", "1", "--out", str(out)]) == EXIT_OK
    data = json.loads((out / "ablation.json").read_text())
    assert len(data["variants"]) == 2
    assert (out / "ablation.png").exists() and (out / "ablation.txt").exists()


def test_params_reports_sharing_delta(tmp_path, capsys):
    assert main(["params", "--vocab", "20", "--d-app", "8", "--d-mot", "8", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "params.json").read_text())
    n = report["config"]["n_levels"]
    assert report["unshared_minus_shared"] == (n - 1) * report["encoder_layer"]
    assert "unshared - shared" in capsys.readouterr().out


def test_gen_data(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["gen-data", "--n-train", "8", "--n-val", "4", "--n-test", "4", "--tasks", "action",
                 "--seed", "1", "--out", str(out)]) == EXIT_OK
    assert {"features.mhnf", "train.jsonl", "answers.json", "vocab.json"} <= set(os.listdir(out))
    assert json.loads(capsys.readouterr().out)["train"]["records"] == 8


def test_missing_config_is_io_error(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == EXIT_IO
    assert "error:" in capsys.readouterr().err


def test_malformed_json_is_io_error(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["train", "--config", str(tmp_path / "bad.json")]) == EXIT_IO


@pytest.mark.parametrize("patch", [{"model": {"d": 15}}, {"model": {"fusion_scale": "cube"}},
                                   {"optim": {"lr": -1}}, {"colour": "red"}])
def test_invalid_config_is_contract_error(tmp_path, tiny_data, patch):
    raw = tiny_run(tiny_data, tmp_path).to_dict()
    for k, v in patch.items():
        raw[k] = {**raw[k], **v} if isinstance(v, dict) else v
    (tmp_path / "c.json").write_text(json.dumps(raw))
    assert main(["train", "--config", str(tmp_path / "c.json")]) == EXIT_CONTRACT


def test_unknown_ablation_axis(trained):
    _, cfg, _ = trained
    assert main(["ablate", "--config", cfg, "--axis", "colour"]) == EXIT_CONTRACT


def test_corrupt_checkpoint_is_io_error(tmp_path, tiny_data):
    (tmp_path / "x.ckpt").write_bytes(b"garbage")
    assert main(["eval", "--checkpoint", str(tmp_path / "x.ckpt"), "--data", tiny_data]) == EXIT_IO
