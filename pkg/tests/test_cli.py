import hashlib
import json

import pytest

from tresdiag.cli import main, selection_recovery
from tresdiag.config import PipelineConfig, config_from_dict, load_config
from tresdiag.errors import ConfigError

FAST = {
    "train": {"max_iterations": 2, "batch_size": 8},
    "interpret": {"n_perturb": 60},
}


def digest(directory):
    h = hashlib.sha256()
    for f in sorted(p for p in directory.rglob("*") if p.is_file()):
        h.update(f.relative_to(directory).as_posix().encode())
        h.update(f.read_bytes())
    return h.hexdigest()


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps(FAST))
    return p


def run(*args):
    return main([str(a) for a in args])


def pipeline(root, cfg_path, seed=5, cases=16):
    base = ["--config", cfg_path, "--seed", seed]
    assert run("generate", *base, "--cases", cases, "--out", root / "data") == 0
    assert run("train", *base, "--dataset", root / "data", "--out", root / "full") == 0
    assert run("attribute", *base, "--checkpoint", root / "full" / "checkpoint.json",
               "--dataset", root / "data", "--out", root / "attr") == 0
    assert run("select", *base, "--attributions", root / "attr", "--k", 5, "--out", root / "sel") == 0
    assert run("train", *base, "--dataset", root / "data", "--channels", root / "sel" / "selected_channels.txt",
               "--out", root / "reduced") == 0
    assert run("report", *base, "--full", root / "full", "--selected", root / "reduced",
               "--dataset", root / "data", "--selection", root / "sel", "--out", root / "report") == 0


def test_config_defaults_and_unknown_keys(tmp_path):
    cfg = load_config(None)
    assert cfg.train.alpha == 0.001 and cfg.select.k == 15 and cfg.dataset.n_cases == 346
    with pytest.raises(ConfigError):
        config_from_dict({"trian": {}})
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"lr": 0.1}})
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    assert config_from_dict(PipelineConfig().to_dict()).to_dict() == PipelineConfig().to_dict()


def test_generate_is_reproducible(tmp_path, cfg_path, capsys):
    assert run("generate", "--config", cfg_path, "--cases", 10, "--out", tmp_path / "a") == 0
    assert "10 cases" in capsys.readouterr().out
    assert len(list((tmp_path / "a" / "cases").glob("*.csv"))) == 10
    assert run("generate", "--config", cfg_path, "--cases", 10, "--out", tmp_path / "b", "--workers", 2) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_refuses_non_empty_output(tmp_path, cfg_path, capsys):
    run("generate", "--config", cfg_path, "--cases", 4, "--out", tmp_path / "a")
    assert run("generate", "--config", cfg_path, "--cases", 4, "--out", tmp_path / "a") == 2
    assert "--force" in capsys.readouterr().err
    assert run("generate", "--config", cfg_path, "--cases", 4, "--out", tmp_path / "a", "--force") == 0


def test_full_pipeline_is_deterministic(tmp_path, cfg_path, capsys):
    pipeline(tmp_path / "one", cfg_path)
    pipeline(tmp_path / "two", cfg_path)
    a = (tmp_path / "one" / "report" / "report.json").read_bytes()
    assert a == (tmp_path / "two" / "report" / "report.json").read_bytes()
    assert digest(tmp_path / "one" / "attr") == digest(tmp_path / "two" / "attr")
    report = json.loads(a)
    assert report["recovery"]["k"] == 5 and len(report["recovery"]["top5"]) == 5
    assert len(report["comparison"]["selected_channels"]) == 5
    reduced = json.loads((tmp_path / "one" / "reduced" / "metrics.json").read_text())
    assert len(reduced["channels"]) == 5
    ckpt = json.loads((tmp_path / "one" / "reduced" / "checkpoint.json").read_text())
    assert ckpt["arch"]["n_params"] == 5
    # attribution reads the training split only: one file per training case
    manifest = json.loads((tmp_path / "one" / "data" / "manifest.json").read_text())
    n_train = sum(e["split"] == "train" for e in manifest["cases"])
    assert len(list((tmp_path / "one" / "attr").glob("attr_*.json"))) == n_train


def test_self_comparison_reports_zero(tmp_path, cfg_path):
    base = ["--config", cfg_path]
    run("generate", *base, "--cases", 8, "--out", tmp_path / "d")
    run("train", *base, "--dataset", tmp_path / "d", "--out", tmp_path / "r")
    assert run("report", *base, "--full", tmp_path / "r", "--selected", tmp_path / "r",
               "--dataset", tmp_path / "nowhere", "--out", tmp_path / "rep") == 0
    rep = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert all(v == 0 for v in rep["comparison"]["relative_errors_percent"].values() if v != "undefined")


def test_dry_run_lists_only_training_files(tmp_path, cfg_path, capsys):
    run("generate", "--config", cfg_path, "--cases", 12, "--out", tmp_path / "d")
    capsys.readouterr()
    assert run("attribute", "--config", cfg_path, "--dataset", tmp_path / "d", "--dry-run",
               "--out", tmp_path / "attr") == 0
    out = capsys.readouterr().out.splitlines()
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    test_files = {e["file"].split("/")[-1] for e in manifest["cases"] if e["split"] == "test"}
    train_files = {e["file"].split("/")[-1] for e in manifest["cases"] if e["split"] == "train"}
    reads = {line.split("/")[-1] for line in out if line.startswith("read ")}
    assert train_files <= reads and not (test_files & reads)
    assert sum(line.startswith("write ") for line in out) == len(train_files)
    assert not (tmp_path / "attr").exists()


def test_channel_file_errors(tmp_path, cfg_path, capsys):
    run("generate", "--config", cfg_path, "--cases", 6, "--out", tmp_path / "d")
    (tmp_path / "empty.txt").write_text("\n")
    assert run("train", "--config", cfg_path, "--dataset", tmp_path / "d", "--channels",
               tmp_path / "empty.txt", "--out", tmp_path / "r") == 2
    (tmp_path / "bad.txt").write_text("p_155010000\nnot_a_channel\n")
    assert run("train", "--config", cfg_path, "--dataset", tmp_path / "d", "--channels",
               tmp_path / "bad.txt", "--out", tmp_path / "r2") == 2
    assert "not_a_channel" in capsys.readouterr().err


def test_select_k_too_large(tmp_path, cfg_path):
    base = ["--config", cfg_path]
    run("generate", *base, "--cases", 6, "--out", tmp_path / "d")
    run("train", *base, "--dataset", tmp_path / "d", "--out", tmp_path / "r")
    run("attribute", *base, "--checkpoint", tmp_path / "r" / "checkpoint.json", "--dataset", tmp_path / "d",
        "--out", tmp_path / "a")
    assert run("select", *base, "--attributions", tmp_path / "a", "--k", 39, "--out", tmp_path / "s") == 2
    assert run("select", *base, "--attributions", tmp_path / "a", "--k", 38, "--out", tmp_path / "s") == 0
    assert len((tmp_path / "s" / "selected_channels.txt").read_text().split()) == 38


def test_mlp_checkpoint_cannot_be_attributed(tmp_path, cfg_path, capsys):
    base = ["--config", cfg_path]
    run("generate", *base, "--cases", 6, "--out", tmp_path / "d")
    run("train", *base, "--dataset", tmp_path / "d", "--kind", "mlp_baseline", "--out", tmp_path / "r")
    assert run("attribute", *base, "--checkpoint", tmp_path / "r" / "checkpoint.json",
               "--dataset", tmp_path / "d", "--out", tmp_path / "a") == 2
    assert "convolutional" in capsys.readouterr().err


def test_missing_inputs_are_io_errors(tmp_path, cfg_path, capsys):
    assert run("train", "--config", cfg_path, "--dataset", tmp_path / "none", "--out", tmp_path / "r") == 4
    run("generate", "--config", cfg_path, "--cases", 6, "--out", tmp_path / "d")
    run("train", "--config", cfg_path, "--dataset", tmp_path / "d", "--out", tmp_path / "r")
    (tmp_path / "r" / "train_log.jsonl").unlink()
    assert run("report", "--config", cfg_path, "--full", tmp_path / "r", "--selected", tmp_path / "r",
               "--out", tmp_path / "rep") == 4
    assert "train_log.jsonl" in capsys.readouterr().err


def test_selection_recovery():
    manifest = {"catalog": [{"name": "a", "informative": True}, {"name": "b", "informative": False},
                            {"name": "c", "informative": True}]}
    rec = selection_recovery(manifest, ["a", "b"], ["b", "a", "c"])
    assert rec["n_informative"] == 1 and rec["fraction"] == 0.5
    assert rec["decoys_in_top5"] == ["b"]
