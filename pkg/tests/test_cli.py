import hashlib
import json

import pytest

from cegan.cli import main
from cegan.gradcheck import run_gradcheck


def write_config(tmp_path, text, name="config.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def sha(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


TINY_TRAIN = """
train:
  max_iterations: 10
  eval_every: 5
  latent_dim: 3
  hidden_dims: [8, 8]
  noise_dims: [3, 3, 3]
  dropout: 0.2
"""


# -- generate -----------------------------------------------------------------


def test_generate_toy_defaults(tmp_path):
    cfg = write_config(tmp_path, "seed: 1\ngenerator:\n  type: toy\n")
    out = tmp_path / "out"
    assert main(["generate", "--config", cfg, "--out", str(out)]) == 0
    lines = (out / "data.csv").read_text().splitlines()
    assert len(lines) == 5001
    header = lines[0].split(",")
    assert header[:9] == ["x0", "x1", "x2", "x3", "x4", "t", "y", "y0", "y1"]
    schema = json.loads((out / "schema.json").read_text())
    assert schema["x_kinds"] == ["continuous"] * 5


def test_generate_idempotent_bytes(tmp_path):
    cfg = write_config(tmp_path, "seed: 9\ngenerator:\n  type: toy\n  n: 200\n")
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", "--config", cfg, "--out", str(out_a)]) == 0
    assert main(["generate", "--config", cfg, "--out", str(out_b)]) == 0
    assert sha(out_a / "data.csv") == sha(out_b / "data.csv")
    assert sha(out_a / "schema.json") == sha(out_b / "schema.json")


def test_generate_rejects_invalid_noise(tmp_path, capsys):
    cfg = write_config(tmp_path, "generator:\n  type: toy\n  zeta: -1\n")
    assert main(["generate", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "zeta" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, "generator:\n  type: toy\n  zeppelin: 3\n")
    assert main(["generate", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "zeppelin" in capsys.readouterr().err


def test_unknown_top_level_key_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, "generator:\n  type: toy\nbanana: 1\n")
    assert main(["generate", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "banana" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["generate", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 1


# -- train ---------------------------------------------------------------------


def test_train_zero_iterations_writes_checkpoint_and_empty_trace(tmp_path):
    cfg = write_config(
        tmp_path,
        "seed: 2\ngenerator:\n  type: toy\n  n: 100\n"
        "train:\n  max_iterations: 0\n  latent_dim: 3\n  hidden_dims: [4]\n  noise_dims: [3, 3, 3]\n",
    )
    out = tmp_path / "out"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "model.ckpt").exists()
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines == ["iter,l_r,d_loss,g_loss,val_l_p"]


def test_train_trace_header_and_determinism(tmp_path):
    cfg = write_config(tmp_path, "seed: 3\ngenerator:\n  type: toy\n  n: 100\n" + TINY_TRAIN)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", cfg, "--out", str(out_a)]) == 0
    assert main(["train", "--config", cfg, "--out", str(out_b)]) == 0
    lines = (out_a / "trace.csv").read_text().splitlines()
    assert lines[0] == "iter,l_r,d_loss,g_loss,val_l_p"
    assert len(lines) == 11
    assert sha(out_a / "trace.csv") == sha(out_b / "trace.csv")
    assert sha(out_a / "model.ckpt") == sha(out_b / "model.ckpt")


def test_train_missing_csv_dataset_fails_validation(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        "generator:\n  type: csv\n  path: missing.csv\n  schema: missing.json\n",
    )
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "missing.csv" in capsys.readouterr().err


# -- ite -----------------------------------------------------------------------


def test_ite_end_to_end_and_schema_mismatch(tmp_path, capsys):
    train_cfg = write_config(
        tmp_path, "seed: 4\ngenerator:\n  type: toy\n  n: 100\n" + TINY_TRAIN, name="train.yaml"
    )
    out = tmp_path / "out"
    assert main(["train", "--config", train_cfg, "--out", str(out)]) == 0

    ite_cfg = write_config(
        tmp_path,
        "seed: 4\ngenerator:\n  type: toy\n  n: 50\n"
        f"inference:\n  mc_samples: 5\n  checkpoint: {out / 'model.ckpt'}\n",
        name="ite.yaml",
    )
    assert main(["ite", "--config", ite_cfg, "--out", str(out)]) == 0
    lines = (out / "ite.csv").read_text().splitlines()
    assert lines[0] == "subject-id,y1_hat,y0_hat,ite_hat"
    assert len(lines) == 51

    # a generator with a different schema must be rejected against the checkpoint
    bad_cfg = write_config(
        tmp_path,
        "seed: 4\ngenerator:\n  type: toy\n  n: 50\n  latent_dim: 3\n"
        f"inference:\n  checkpoint: {out / 'model.ckpt'}\n",
        name="bad.yaml",
    )
    assert main(["ite", "--config", bad_cfg, "--out", str(out)]) == 1
    assert "schema" in capsys.readouterr().err


def test_ite_requires_checkpoint(tmp_path, capsys):
    cfg = write_config(tmp_path, "generator:\n  type: toy\n  n: 50\n")
    assert main(["ite", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "checkpoint" in capsys.readouterr().err


# -- experiment ------------------------------------------------------------------


EXP_BASE = (
    "seed: 5\n"
    "generator:\n  type: toy\n  n: 100\n"
    "eval:\n  methods: [lr1, knn]\n  realizations: 2\n  knn_k: 3\n"
)


def test_experiment_single_method_report(tmp_path):
    cfg = write_config(tmp_path, "seed: 6\ngenerator:\n  type: toy\n  n: 100\neval:\n  methods: [lr1]\n  realizations: 1\n")
    out = tmp_path / "out"
    assert main(["experiment", "--config", cfg, "--out", str(out)]) == 0
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "method,split,metric,mean,std,realizations"
    assert len(lines) == 5  # one method block: 2 splits x 2 metrics
    doc = json.loads((out / "report.json").read_text())
    assert doc["summary"]["lr1"]["out-sample"]["sqrt_pehe"]["std"] == 0.0


def test_experiment_reports_identical_across_runs_and_jobs(tmp_path):
    cfg = write_config(tmp_path, EXP_BASE)
    outs = [tmp_path / n for n in ("r1", "r2", "r4")]
    assert main(["experiment", "--config", cfg, "--out", str(outs[0]), "--jobs", "1"]) == 0
    assert main(["experiment", "--config", cfg, "--out", str(outs[1]), "--jobs", "1"]) == 0
    assert main(["experiment", "--config", cfg, "--out", str(outs[2]), "--jobs", "4"]) == 0
    hashes = [sha(o / "report.json") for o in outs]
    assert hashes[0] == hashes[1] == hashes[2]
    csv_hashes = [sha(o / "report.csv") for o in outs]
    assert csv_hashes[0] == csv_hashes[1] == csv_hashes[2]


def test_experiment_sweep_emits_chart_and_per_point_reports(tmp_path):
    cfg = write_config(
        tmp_path,
        "seed: 7\n"
        "generator:\n  type: toy\n  n: 100\n  zeta: [0.0, 2.0]\n"
        "eval:\n  methods: [lr1, knn]\n  realizations: 1\n  knn_k: 3\n",
    )
    out = tmp_path / "out"
    assert main(["experiment", "--config", cfg, "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["sweep_field"] == "zeta"
    assert [p["value"] for p in doc["points"]] == [0.0, 2.0]
    svg = (out / "sweep.svg").read_text()
    assert svg.startswith("<?xml")
    assert "lr1" in svg and "knn" in svg
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0].startswith("zeta,method,")
    assert len(lines) == 1 + 2 * 2 * 4  # 2 sweep points x 2 methods x 4 metric rows


def test_experiment_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path, EXP_BASE)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["experiment", "--config", cfg, "--out", str(out_a), "--seed", "123"]) == 0
    assert main(["experiment", "--config", cfg, "--out", str(out_b)]) == 0
    assert sha(out_a / "report.json") != sha(out_b / "report.json")


# -- gradcheck --------------------------------------------------------------------


def test_gradcheck_cli_passes(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "max rel err" in out
    for group in ("encoder", "inference_net", "predictor", "reconstructor", "discriminator", "propensity_net"):
        assert group in out


def test_gradcheck_corruption_hook_names_the_group():
    ok, results = run_gradcheck(seed=7, corrupt_group="predictor")
    assert not ok
    failing = {r.group for r in results if not r.passed}
    assert failing == {"predictor"}
