import os

import numpy as np
import pytest

from partialpde import kvdoc
from partialpde.cli import main, resolve_config
from partialpde.errors import UsageError


def test_precedence_flag_over_config_over_default(tmp_path):
    cfg_file = tmp_path / "c.toml"
    kvdoc.dump({"pde_weight": 0.5, "epochs": 7}, cfg_file)
    cfg = resolve_config("train", {"config": str(cfg_file), "pde_weight": 0.25,
                                   "dataset": "d", "out": "o"})
    assert cfg["pde_weight"] == 0.25      # flag wins
    assert cfg["epochs"] == 7             # file beats default
    assert cfg["q"] == 100                # default


def test_unknown_config_key_rejected(tmp_path):
    cfg_file = tmp_path / "c.toml"
    kvdoc.dump({"not_a_key": 1}, cfg_file)
    with pytest.raises(UsageError):
        resolve_config("train", {"config": str(cfg_file), "dataset": "d", "out": "o"})


def test_missing_required_flag_is_usage_error():
    assert main(["train"]) == 2


def test_eval_before_train_is_missing_checkpoint(tmp_path):
    ds = tmp_path / "ds"
    assert main(["generate", "--out", str(ds), "--n-train", "1", "--n-unlabeled", "1",
                 "--n-test", "1", "--horizon-t", "0.03", "--grid", "16",
                 "--obs-gap", "4"]) == 0
    rc = main(["eval", "--dataset", str(ds), "--checkpoint", str(tmp_path / "nope"),
               "--out", str(tmp_path / "ev")])
    assert rc == 3


def test_generate_writes_manifest_and_refuses_clobber(tmp_path):
    ds = tmp_path / "ds"
    args = ["generate", "--out", str(ds), "--n-train", "2", "--n-unlabeled", "1",
            "--n-test", "1", "--horizon-t", "0.03", "--grid", "16", "--obs-gap", "4",
            "--system", "burgers"]
    assert main(args) == 0
    assert (ds / "manifest.toml").exists()
    assert (ds / "run_config.toml").exists()
    assert main(args) == 3                 # clobber refused -> data error
    assert main(args + ["--overwrite"]) == 0


def test_full_pipeline_smoke(tmp_path):
    ds, run, ev, ro = (str(tmp_path / n) for n in ("ds", "run", "ev", "ro"))
    assert main(["generate", "--out", ds, "--n-train", "2", "--n-unlabeled", "2",
                 "--n-test", "1", "--horizon-t", "0.12", "--grid", "16",
                 "--obs-gap", "4"]) == 0
    assert main(["train", "--dataset", ds, "--out", run, "--epochs", "2", "--q", "2",
                 "--m1", "1", "--m2", "1", "--enc-width", "8", "--enc-blocks", "2",
                 "--tr-width", "8", "--tr-layers", "2", "--modes", "4",
                 "--batch-size", "8"]) == 0
    ckpt = os.path.join(run, "final")
    assert main(["eval", "--dataset", ds, "--checkpoint", ckpt, "--out", ev,
                 "--horizon", "3"]) == 0
    assert main(["rollout", "--dataset", ds, "--checkpoint", ckpt, "--out", ro,
                 "--horizon", "3"]) == 0
    assert main(["export", "--runs", f"{ev},{ro}", "--labels", "a,b",
                 "--out", str(tmp_path / "table.csv")]) == 0
    # provenance echoed everywhere
    for d in (run, ev, ro):
        doc = kvdoc.load(os.path.join(d, "run_config.toml"))
        assert "code_version" in doc
    # training refuses to clobber its run dir
    assert main(["train", "--dataset", ds, "--out", run, "--epochs", "1"]) == 2


def test_pde_weight_zero_flag_runs(tmp_path):
    ds, run = str(tmp_path / "ds"), str(tmp_path / "run")
    assert main(["generate", "--out", ds, "--n-train", "2", "--n-unlabeled", "1",
                 "--n-test", "1", "--horizon-t", "0.04", "--grid", "16",
                 "--obs-gap", "4"]) == 0
    assert main(["train", "--dataset", ds, "--out", run, "--epochs", "1", "--q", "1",
                 "--pde-weight", "0", "--no-finetune", "--enc-width", "8",
                 "--enc-blocks", "1", "--tr-width", "8", "--tr-layers", "1",
                 "--modes", "4", "--batch-size", "8"]) == 0
    doc = kvdoc.load(os.path.join(run, "run_config.toml"))
    assert doc["pde_weight"] == 0
    assert doc["no_finetune"] is True


def test_irregular_points_flag(tmp_path):
    ds = str(tmp_path / "ds")
    assert main(["generate", "--out", ds, "--n-train", "1", "--n-unlabeled", "1",
                 "--n-test", "1", "--horizon-t", "0.03", "--grid", "16",
                 "--obs-points", "0:0,3:5,9:2,12:12"]) == 0
    from partialpde.manifest import load_manifest

    man = load_manifest(ds)
    assert man.obs.kind == "irregular"
    assert len(man.obs.points) == 4
    with pytest.raises(SystemExit):
        main(["generate", "--bad-flag", "x"])
