import json
from pathlib import Path

import pytest

from layoutgen.cli import main, parse_gamma, parse_sweep
from layoutgen.data_engine.compose import save_template
from layoutgen.errors import ConfigurationError

from conftest import icon_template

TRAIN_FLAGS = ["--epochs", "2", "--max-steps", "3", "--batch-size", "2", "--blocks", "1", "--heads", "2",
               "--d-model", "8", "--d-text", "8", "--lr", "1e-3"]


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--synthetic", "--count", "4", "--seed", "1", "--out", str(root / "data")]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "run"), *TRAIN_FLAGS]) == 0
    return root


def test_synth_layout_and_stats(workspace):
    data = workspace / "data"
    items = sorted(p.name for p in data.iterdir() if p.is_dir())
    assert items == ["0000", "0001", "0002", "0003"]
    stats = json.loads((data / "stats.json").read_text())
    assert stats["count"] == 4


def test_synth_byte_identical(workspace, tmp_path):
    assert main(["synth", "--synthetic", "--count", "4", "--seed", "1", "--out", str(tmp_path / "d")]) == 0
    assert tree(tmp_path / "d") == tree(workspace / "data")


def test_synth_mode_and_existing_output_errors(workspace, tmp_path):
    assert main(["synth", "--out", str(tmp_path / "x")]) == 2
    assert main(["synth", "--synthetic", "--count", "2", "--out", str(workspace / "data")]) == 2
    assert not (tmp_path / "x").exists()


def test_build_db_and_augment(tmp_path):
    assert main(["synth", "--build-db", "--objects", "12", "--backgrounds", "3", "--out", str(tmp_path / "db")]) == 0
    report = json.loads((tmp_path / "db" / "filter_report.json").read_text())
    assert len(report) == 15
    save_template(icon_template(), tmp_path / "tpl")
    out = tmp_path / "aug"
    assert main(["synth", "--augment", "--template", str(tmp_path / "tpl"), "--db", str(tmp_path / "db"),
                 "--k", "3", "--out", str(out)]) == 0
    plans = json.loads((out / "plans.json").read_text())
    assert 0 < len(plans) <= 3
    assert all(p["replacements"][0][0] == 2 for p in plans)


def test_augment_missing_db_writes_nothing(tmp_path):
    save_template(icon_template(), tmp_path / "tpl")
    out = tmp_path / "aug"
    assert main(["synth", "--augment", "--template", str(tmp_path / "tpl"), "--db", str(tmp_path / "nope"),
                 "--out", str(out)]) == 2
    assert not out.exists()
    assert [p.name for p in tmp_path.iterdir()] == ["tpl"]


def test_train_outputs_and_determinism(workspace, tmp_path):
    run = workspace / "run"
    lines = (run / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss,text_loss,nontext_loss" and len(lines) == 4
    assert main(["train", "--data", str(workspace / "data"), "--out", str(tmp_path / "r2"), *TRAIN_FLAGS]) == 0
    assert tree(tmp_path / "r2") == tree(run)


def test_train_resume_matches_uninterrupted(workspace, tmp_path):
    data = str(workspace / "data")
    flags = [f for f in TRAIN_FLAGS]
    flags[flags.index("--max-steps") + 1] = "1"
    assert main(["train", "--data", data, "--out", str(tmp_path / "half"), *flags]) == 0
    assert main(["train", "--data", data, "--out", str(tmp_path / "rest"), "--resume",
                 str(tmp_path / "half" / "checkpoint.json"), "--max-steps", "3"]) == 0
    assert tree(tmp_path / "rest") == tree(workspace / "run")


def test_train_rejects_zero_epochs(workspace, tmp_path):
    assert main(["train", "--data", str(workspace / "data"), "--out", str(tmp_path / "r"), "--epochs", "0"]) == 2
    assert not (tmp_path / "r").exists()
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "r")]) == 2


def test_generate_and_eval_reproducible(workspace, tmp_path):
    ck = str(workspace / "run" / "checkpoint.json")
    man = str(workspace / "data" / "0000" / "manifest.json")
    for name in ("g1", "g2"):
        assert main(["generate", "--checkpoint", ck, "--manifest", man, "--steps", "3", "--gamma", "1=1.5",
                     "--out", str(tmp_path / name)]) == 0
    assert tree(tmp_path / "g1") == tree(tmp_path / "g2")
    meta = json.loads((tmp_path / "g1" / "0000" / "meta.json").read_text())
    assert meta["gammas"] == {"1": 1.5} and meta["layout_conditional"]
    n_layers = len(json.loads(Path(man).read_text())["layers"])
    assert len(list((tmp_path / "g1" / "0000" / "layers").iterdir())) == n_layers
    for name in ("e1", "e2"):
        assert main(["eval", "--outputs", str(tmp_path / "g1"), "--judge", "stub", "--out", str(tmp_path / name)]) == 0
    assert tree(tmp_path / "e1") == tree(tmp_path / "e2")
    report = json.loads((tmp_path / "e1" / "report.json").read_text())
    assert report["bucket_labels"] == ["<=10", "10-15", "15-20", ">=20"]
    assert set(report["buckets"]) == set(report["bucket_labels"])


def test_generate_sweep_and_gamma_errors(workspace, tmp_path):
    ck = str(workspace / "run" / "checkpoint.json")
    man = str(workspace / "data" / "0001" / "manifest.json")
    assert main(["generate", "--checkpoint", ck, "--manifest", man, "--steps", "2", "--sweep", "alpha=0.1,0.5,0.9",
                 "--out", str(tmp_path / "s")]) == 0
    assert sorted(p.name for p in (tmp_path / "s" / "0000").iterdir()) == ["alpha=0.1", "alpha=0.5", "alpha=0.9"]
    assert main(["generate", "--checkpoint", ck, "--manifest", man, "--gamma", "99=1",
                 "--out", str(tmp_path / "bad")]) == 2
    assert not (tmp_path / "bad").exists()
    plain = tmp_path / "plain"
    assert main(["generate", "--checkpoint", ck, "--manifest", man, "--steps", "2", "--out", str(plain)]) == 0
    assert json.loads((plain / "0000" / "meta.json").read_text())["layout_conditional"] is False


def test_eval_errors_and_incomplete(workspace, tmp_path, monkeypatch):
    (tmp_path / "empty").mkdir()
    assert main(["eval", "--outputs", str(tmp_path / "empty"), "--out", str(tmp_path / "e")]) == 2
    monkeypatch.setenv("JUDGE_ENDPOINT", "http://127.0.0.1:9/")
    code = main(["eval", "--outputs", str(workspace / "data"), "--judge", "remote", "--timeout", "0.2",
                 "--attempts", "1", "--out", str(tmp_path / "r")])
    assert code == 3
    assert json.loads((tmp_path / "r" / "report.json").read_text())["complete"] is False


def test_stats(workspace, tmp_path, capsys):
    assert main(["stats", "--data", str(workspace / "data")]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["count"] == 4
    assert main(["stats", "--data", str(workspace / "data"), "--out", str(tmp_path / "s.json")]) == 0
    assert json.loads((tmp_path / "s.json").read_text()) == printed
    (tmp_path / "nothing").mkdir()
    assert main(["stats", "--data", str(tmp_path / "nothing")]) == 2


def test_flag_parsers():
    assert parse_gamma(["7=5", "2=1.5"], 8) == {7: 5.0, 2: 1.5}
    with pytest.raises(ConfigurationError):
        parse_gamma(["x"], 3)
    assert parse_sweep("gamma:2=0,1.5,7") == ("gamma:2", [0.0, 1.5, 7.0])
    with pytest.raises(ConfigurationError):
        parse_sweep("beta=1")
