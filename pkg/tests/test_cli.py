import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from bayes_snn import checkpoint as ck
from bayes_snn.cli import main
from bayes_snn.config import ConfigError, ExperimentConfig, from_dict, load_config
from bayes_snn.metrics import bin_predictions, ece

ROOT = Path(__file__).resolve().parents[1]
SYNTH = ROOT / "configs" / "synthetic.yaml"


def write_cfg(tmp_path, **over) -> Path:
    cfg = load_config(SYNTH).replace(**over)
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(cfg.to_dict()))
    return p


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_shipped_configs_load():
    for p in (ROOT / "configs").glob("*.yaml"):
        assert isinstance(load_config(p), ExperimentConfig)


def test_config_round_trip_and_unknown_fields():
    cfg = load_config(SYNTH)
    assert from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError) as info:
        from_dict({"train": {"etaa": 0.1}})
    assert info.value.field == "train.etaa"
    with pytest.raises(ConfigError):
        from_dict({"train": {"rho": -1.0}})
    with pytest.raises(ConfigError):
        from_dict({"model": {"binary": True}, "train": {"trainer": "sgd"}})
    with pytest.raises(ConfigError):
        cfg.replace(**{"train.nope": 1})


def test_train_writes_log_and_checkpoint(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    code, out, _ = run(["train", "--config", cfg, "--out", tmp_path / "a"], capsys)
    assert code == 0 and json.loads(out)["epochs"] == 2
    with open(tmp_path / "a" / "train_log.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2
    assert (tmp_path / "a" / "checkpoint" / "manifest.json").exists()


def test_train_zero_epochs_checkpoints_init(tmp_path, capsys):
    cfg = write_cfg(tmp_path, **{"train.trainer": "sgd"})
    run(["train", "--config", cfg, "--out", tmp_path / "z", "--epochs", 0], capsys)
    ckpt = ck.load(tmp_path / "z" / "checkpoint")
    w = ckpt.tensors["weights"]
    assert np.all(np.abs(w) <= 0.1)


def test_rerun_identical_bytes_with_workers(tmp_path, capsys):
    cfg = write_cfg(tmp_path, **{"train.workers": 3, "train.replica_group": 2})
    for name in ("a", "b"):
        assert run(["train", "--config", cfg, "--out", tmp_path / name], capsys)[0] == 0
    for f in ("manifest.json", "tensors.bin"):
        a = (tmp_path / "a" / "checkpoint" / f).read_bytes()
        b = (tmp_path / "b" / "checkpoint" / f).read_bytes()
        assert a == b
    serial = write_cfg(tmp_path, **{"train.replica_group": 2})
    run(["train", "--config", serial, "--out", tmp_path / "s"], capsys)
    ta = ck.load(tmp_path / "a" / "checkpoint").tensors
    ts = ck.load(tmp_path / "s" / "checkpoint").tensors
    for k in ta:
        assert ta[k].tobytes() == ts[k].tobytes()


def test_checkpoint_round_trip_bytes_and_rejections(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    run(["train", "--config", cfg, "--out", tmp_path / "a"], capsys)
    src = tmp_path / "a" / "checkpoint"
    ck.save(ck.load(src), tmp_path / "copy")
    for f in ("manifest.json", "tensors.bin"):
        assert (src / f).read_bytes() == (tmp_path / "copy" / f).read_bytes()
    man = json.loads((src / "manifest.json").read_text())
    man["future_field"] = 1
    (tmp_path / "copy" / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(ck.CheckpointError):
        ck.load(tmp_path / "copy")
    del man["future_field"]
    man["format_version"] = 99
    (tmp_path / "copy" / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(ck.CheckpointError):
        ck.load(tmp_path / "copy")


def test_eval_reports_consistent(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    run(["train", "--config", cfg, "--out", tmp_path / "a"], capsys)
    ckpt = tmp_path / "a" / "checkpoint"
    code, out, _ = run(["eval", "--checkpoint", ckpt, "--split", "train", "--out", tmp_path / "e1"],
                       capsys)
    assert code == 0
    run(["eval", "--checkpoint", ckpt, "--split", "train", "--out", tmp_path / "e2"], capsys)
    assert (tmp_path / "e1" / "report.json").read_bytes() == (tmp_path / "e2" / "report.json").read_bytes()
    rep = json.loads((tmp_path / "e1" / "report.json").read_text())
    with open(tmp_path / "e1" / "predictions.csv") as fh:
        rows = list(csv.DictReader(fh))
    conf = [float(r["confidence"]) for r in rows]
    ok = [r["label"] == r["prediction"] for r in rows]
    assert ece(bin_predictions(conf, ok)) == pytest.approx(rep["ece"], abs=1e-15)
    assert rep["meta"]["seed"] == 0 and rep["meta"]["mode"] == "committee"


def test_eval_frequentist_sample_rule(tmp_path, capsys):
    cfg = write_cfg(tmp_path, **{"train.trainer": "sgd"})
    run(["train", "--config", cfg, "--out", tmp_path / "f"], capsys)
    ckpt = tmp_path / "f" / "checkpoint"
    assert run(["eval", "--checkpoint", ckpt, "--samples", 1], capsys)[0] == 0
    code, _, err = run(["eval", "--checkpoint", ckpt, "--samples", 5], capsys)
    assert code == 2 and json.loads(err)["error"] == "UsageError"


def test_continual_resume_matches_uninterrupted(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert run(["continual", "--config", cfg, "--out", tmp_path / "full"], capsys)[0] == 0
    run(["continual", "--config", cfg, "--out", tmp_path / "part", "--stop-after", 3], capsys)
    with open(tmp_path / "part" / "history.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 3 * 2
    run(["continual", "--config", cfg, "--out", tmp_path / "part", "--resume"], capsys)
    for f in ("history.csv", "final.csv", "checkpoint/tensors.bin", "checkpoint/manifest.json"):
        assert (tmp_path / "full" / f).read_bytes() == (tmp_path / "part" / f).read_bytes()
    with open(tmp_path / "full" / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 2 * 2


def test_encode_dump(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    code, out, _ = run(["encode", "--config", cfg, "--out", tmp_path / "enc", "--count", 2], capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["examples"] == 2 and summary["T"] == 20
    with open(tmp_path / "enc" / "spikes.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(int(r["example"]) < 2 for r in rows)


def test_error_json_and_codes(tmp_path, capsys):
    code, _, err = run(["train", "--config", write_cfg(tmp_path), "--rho", -1], capsys)
    assert code == 2
    doc = json.loads(err)
    assert doc["error"] == "config" and doc["field"] == "train.rho"
    code, _, err = run(["eval", "--checkpoint", tmp_path / "missing"], capsys)
    assert code != 0 and "error" in json.loads(err)
    code, _, err = run(["bogus"], capsys)
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["error"] == "usage"
