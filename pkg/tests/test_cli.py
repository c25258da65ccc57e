import json

import pytest

from eeg_cloak.cli import dispatch
from eeg_cloak.config import RunConfig, load_config
from eeg_cloak.dataset import Manifest, largest_remainder
from eeg_cloak.errors import ConfigInvalid
from eeg_cloak.topomap import load_images

from helpers import TINY_CONFIG, run_pipeline


def test_help_exits_zero(capsys):
    assert dispatch(["--help"]) == 0
    out = capsys.readouterr().out
    for cmd in ("ingest", "split", "preprocess", "dummies", "train-cls", "train-gan", "disguise", "eval", "ablate",
                "export-png"):
        assert cmd in out


def test_subcommand_help_documents_flags(capsys):
    assert dispatch(["train-gan", "--help"]) == 0
    out = capsys.readouterr().out
    for flag in ("--constraints", "--config", "--workdir", "--threads"):
        assert flag in out


def test_unknown_subcommand_exit_2(capsys):
    assert dispatch(["frobnicate"]) == 2
    assert "invalid choice" in capsys.readouterr().err


def test_empty_config_gives_defaults(tmp_path):
    (tmp_path / "c.json").write_text("")
    assert load_config(tmp_path / "c.json") == RunConfig()


def test_unknown_key_named(tmp_path):
    (tmp_path / "c.json").write_text('{"lambda_cycl": 5}')
    with pytest.raises(ConfigInvalid, match="lambda_cycl"):
        load_config(tmp_path / "c.json")


@pytest.mark.parametrize("body", ['{"seed": "zero"}', '{"gan_lr": -1}', '{"constraints": "all"}', "[1]", "{bad",
                                  '{"cls_joint": 1}', '{"split_ratios": [0.5, 0.5]}'])
def test_invalid_configs(tmp_path, body):
    (tmp_path / "c.json").write_text(body)
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "c.json")


def test_config_invalid_exit_3(tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"lambda_cycl": 5}')
    assert dispatch(["split", "--config", str(tmp_path / "c.json")]) == 3
    assert "lambda_cycl" in capsys.readouterr().err


def test_stage_failure_exit_4(tmp_path, capsys):
    assert dispatch(["split", "--workdir", str(tmp_path), "--quiet"]) == 4
    assert dispatch(["ingest", "--root", str(tmp_path / "nothing"), "--workdir", str(tmp_path), "--quiet"]) == 4


def test_workdir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("EEG_CLOAK_WORKDIR", str(tmp_path / "envwork"))
    assert dispatch(["ingest", "--root", str(tmp_path / "c"), "--synthetic-fixtures", "2", "--quiet"]) == 0
    assert (tmp_path / "envwork" / "manifest.json").exists()
    # an explicit flag wins over the environment
    assert dispatch(["split", "--workdir", str(tmp_path / "envwork"), "--quiet"]) == 0
    assert dispatch(["split", "--workdir", str(tmp_path / "elsewhere"), "--quiet"]) == 4


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    work = run_pipeline(dispatch, root, {**TINY_CONFIG, "gate_threshold": 0.5})
    return root, work


def test_pipeline_artifacts(tiny_run):
    _, work = tiny_run
    for rel in ("manifest.json", "split.json", "features.npy", "features.json", "normalizer.json",
                "dummies/dummies.json", "models/identity.ckpt", "models/alcoholism.history.csv", "gan/alc.ckpt",
                "gan/both.losses.csv", "reports/ablation.json", "reports/ablation.csv", "reports/ablation.txt",
                "reports/compare_alc.svg"):
        assert (work / rel).exists(), rel
    table = json.loads((work / "reports/ablation.json").read_text())
    assert set(table["regimes"]) == {"none", "alc", "sti", "both"}
    assert len(Manifest.load(work / "manifest.json").subjects) == 4
    assert len(load_images(work / "images/train")) == 4 * largest_remainder(15, (0.7, 0.2, 0.1))[0]


def test_config_embedded_everywhere(tiny_run):
    from eeg_cloak.checkpoint import load_checkpoint

    _, work = tiny_run
    for rel in ("manifest.json", "split.json", "normalizer.json", "features.json", "dummies/dummies.json",
                "images/train/run_config.json", "reports/ablation.json", "reports/original_identity.json",
                "reports/compare_none.json"):
        assert json.loads((work / rel).read_text())["config"]["gate_threshold"] == 0.5, rel
    for rel in ("models/stimulus.ckpt", "gan/sti.ckpt"):
        assert load_checkpoint(work / rel)[1]["run_config"]["gate_threshold"] == 0.5


def test_disguise_eval_predict_export(tiny_run, capsys):
    root, work = tiny_run
    cfg = ["--config", str(root / "config.json"), "--quiet"]
    out = root / "disg"
    assert dispatch(["disguise", *cfg, "--model", str(work / "gan/alc.ckpt"), "--in", str(work / "images/test"),
                     "--out", str(out)]) == 0
    imgs = load_images(out)
    assert imgs and all(im.provenance == "disguised" for im in imgs)
    assert dispatch(["eval", *cfg, "--model", str(work / "models/alcoholism.ckpt"), "--images", str(out),
                     "--out", str(root / "e.json")]) == 0
    rep = json.loads((root / "e.json").read_text())
    assert rep["provenance"] == "disguised" and rep["task"] == "alcoholism"
    assert dispatch(["eval", *cfg, "--regime", "alc"]) == 0
    assert dispatch(["predict", *cfg, "--model", str(work / "models/identity.ckpt"), "--images",
                     str(work / "images/validation"), "--out", str(root / "p.csv")]) == 0
    assert (root / "p.csv").read_text().startswith("name,subject_id,prediction,p0")
    assert dispatch(["export-png", *cfg, "--in", str(work / "dummies"), "--out", str(root / "png")]) == 0
    assert len(list((root / "png").glob("*.png"))) == 20
    # disguising disguised images is a stage failure
    assert dispatch(["disguise", *cfg, "--model", str(work / "gan/alc.ckpt"), "--in", str(out),
                     "--out", str(root / "x")]) == 4


def test_joint_identity_is_stage_failure(tiny_run):
    root, _ = tiny_run
    assert dispatch(["train-cls", "--config", str(root / "config.json"), "--quiet", "--task", "identity",
                     "--joint", "--out", str(root / "x.ckpt")]) == 4


def test_stage_rerun_is_byte_identical(tiny_run):
    root, work = tiny_run
    before = {p: p.read_bytes() for p in (work / "images").rglob("*") if p.is_file()}
    before[work / "split.json"] = (work / "split.json").read_bytes()
    cfg = ["--config", str(root / "config.json"), "--quiet"]
    assert dispatch(["split", *cfg]) == 0 and dispatch(["preprocess", *cfg]) == 0
    assert all(p.read_bytes() == b for p, b in before.items())
