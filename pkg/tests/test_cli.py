import csv
import json

import pytest

from divnet.cli import main


def write_config(path, doc):
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def toy_config(tmp_path):
    return write_config(tmp_path / "toy.json", {
        "task": "toy_regression", "train": {"epochs": 2}, "data": {"toy": {"step": 0.02}},
        "timing_repeats": 3, "timing_warmup": 1})


def test_bench_smoke(tmp_path, toy_config, capsys):
    out = tmp_path / "run"
    assert main(["bench", "--config", str(toy_config), "--out", str(out)]) == 0
    for name in ("report.csv", "report.json", "series.csv", "resolved_config.json", "logs/den.json"):
        assert (out / name).exists(), name
    assert len(capsys.readouterr().out.strip().splitlines()) == 4
    with open(out / "report.csv") as f:
        assert len(list(csv.reader(f))) == 5


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "bad.json", {"task": "toy_regression", "train": {"learnign_rate": 0.1}})
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "learnign_rate" in capsys.readouterr().err


def test_invalid_json_exit_2(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["bench", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 2
    assert "none.json" in capsys.readouterr().err


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_gen_toy(tmp_path):
    assert main(["gen-toy", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "toy.csv").read_text().splitlines()
    assert lines[0] == "x,y,y_true" and len(lines) == 6002


def test_train_eval_inspect(tmp_path, toy_config, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(toy_config), "--out", str(out), "--methods", "den"]) == 0
    model = out / "models" / "den.model"
    assert model.exists()
    capsys.readouterr()
    assert main(["inspect", str(model)]) == 0
    text = capsys.readouterr().out
    assert "kind: den" in text and "K: 5" in text
    # trunk 1->64 (128) + 5 * (64->64 (4160) + 64->1 (65))
    assert "parameter_count: 21253" in text
    assert main(["eval", "--config", str(toy_config), "--out", str(tmp_path / "ev"), "--model", str(model)]) == 0
    assert json.loads((tmp_path / "ev" / "report.json").read_text())["rows"][0]["method"] == "den"


def test_inspect_truncated(tmp_path, toy_config, capsys):
    out = tmp_path / "run"
    main(["train", "--config", str(toy_config), "--out", str(out), "--methods", "ensemble"])
    model = out / "models" / "ensemble.model"
    model.write_bytes(model.read_bytes()[:100])
    assert main(["inspect", str(model)]) == 2
    assert "error" in capsys.readouterr().err


def test_rerun_from_snapshot(tmp_path, toy_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["bench", "--config", str(toy_config), "--out", str(a), "--seed", "4"]) == 0
    assert main(["bench", "--config", str(a / "resolved_config.json"), "--out", str(b)]) == 0
    ra, rb = (json.loads((d / "report.json").read_text()) for d in (a, b))
    for doc in (ra, rb):
        for row in doc["rows"]:
            for k in ("inference_time_s", "inference_time_std_s", "per_sample_us"):
                row.pop(k)
    assert ra == rb and ra["seed"] == 4


def test_ood_rejects_other_task(tmp_path, toy_config):
    assert main(["ood", "--config", str(toy_config), "--out", str(tmp_path / "o")]) == 2
