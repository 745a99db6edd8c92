import json
import os
import subprocess
import sys

import numpy as np
import pytest

from precondgp.cli import main
from precondgp.exceptions import InputError
from precondgp.experiments import ExperimentConfig, git_blob_hash, read_result_csv, run_experiment


def write_config(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_default_config_round_trips():
    cfg = ExperimentConfig()
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg


def test_non_default_config_round_trips():
    cfg = ExperimentConfig(experiment="training", ranks=(8, 32), probe_counts=(3, 5), noise=0.123456789,
                           standardize=True, split=(0.7, 0.1, 0.2), quality_kernels=("rbf", "matern32"))
    back = ExperimentConfig.from_ini(cfg.to_ini())
    assert back == cfg
    assert back.to_ini() == cfg.to_ini()


@pytest.mark.parametrize("text, match", [
    ("[dataset]\nsize = 4\n", "unknown config key"),
    ("[probes]\ncounts = 4, x\n", "bad value"),
    ("[experiment]\nkind = plots\n", "unknown experiment"),
    ("[preconditioner]\nkind = ichol\n", "unknown preconditioner"),
    ("[kernel]\nnoise = -1\n", "positive"),
    ("[kernel]\nfamily = periodic\n", "unknown kernel"),
    ("no section header\n", "malformed"),
    ("[dataset]\nsource = csv\npath = nowhere.csv\n", "does not exist"),
])
def test_invalid_configs(text, match):
    with pytest.raises(InputError, match=match):
        ExperimentConfig.from_ini(text)


def test_git_blob_hash_matches_git():
    # `printf 'hello\n' | git hash-object --stdin`
    assert git_blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


BV = """
[experiment]
kind = bias_variance
[dataset]
n = 48
[preconditioner]
kind = {kind}
[probes]
counts = 2, 4
repetitions = 3
[solver]
rel_tol = 1e-12
"""


def test_bias_variance_outputs(tmp_path):
    cfg = ExperimentConfig.from_ini(BV.format(kind="cholesky"))
    outputs = run_experiment(cfg, tmp_path)
    schema, raw = read_result_csv(outputs[0])
    assert schema.startswith("# schema: precondgp/bias_variance_raw/v1; columns: probes preconditioner")
    # two probe counts x (baseline + matched rank) x three repetitions
    assert len(raw) == 2 * 2 * 3
    _, summary = read_result_csv(outputs[1])
    assert len(summary) == 2 * 2 * 4  # value and three gradient components
    seeds = {(r["probes"], r["repetition"]): set() for r in raw}
    for r in raw:
        seeds[(r["probes"], r["repetition"])].add(r["probe_seed"])
    assert all(len(v) == 1 for v in seeds.values())  # paired across preconditioners
    text = open(outputs[2]).read()
    assert "config hash:" in text and "bias_variance_raw.csv" in text


def test_bias_variance_exact_preconditioner_collapses(tmp_path):
    cfg = ExperimentConfig.from_ini(BV.format(kind="exact"))
    outputs = run_experiment(cfg, tmp_path)
    _, summary = read_result_csv(outputs[1])
    exact = [r for r in summary if r["preconditioner"] == "exact"]
    assert len(exact) == 8
    for r in exact:
        assert float(r["rel_bias"]) <= 1e-8
        assert float(r["median_rel_error"]) <= 1e-8


def test_bias_variance_is_reproducible(tmp_path):
    cfg = ExperimentConfig.from_ini(BV.format(kind="cholesky"))
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    assert open(a[0]).read() == open(b[0]).read()


def test_quality_curves_outputs(tmp_path):
    cfg = ExperimentConfig(experiment="quality_curves", n=64, ranks=(2, 4), quality_seeds=2,
                           quality_kernels=("rbf", "rq"), kinds=("cholesky", "rff", "qff"))
    outputs = run_experiment(cfg, tmp_path)
    _, rows = read_result_csv(outputs[0])
    # rq has no Fourier builders: rbf 3 kinds, rq 1 kind; two ranks, two seeds
    assert len(rows) == (3 + 1) * 2 * 2
    _, summary = read_result_csv(outputs[1])
    assert len(summary) == (3 + 1) * 2 and all(r["seeds"] == "2" for r in summary)


def test_training_outputs(tmp_path):
    cfg = ExperimentConfig(experiment="training", n=80, ranks=(16,), max_steps=3, n_probes=4,
                           include_exact=True)
    outputs = run_experiment(cfg, tmp_path)
    _, rows = read_result_csv(outputs[0])
    assert [r["configuration"] for r in rows] == ["baseline", "preconditioned", "dense"]
    assert rows[0]["rank"] == "0" and rows[1]["rank"] == "16"
    assert all(r["train_nll_method"] == "exact" for r in rows)
    assert rows[0]["seed"] == rows[1]["seed"]
    stats = json.load(open(outputs[1]))
    assert stats["y_std"] == 1.0  # synthetic data is left on its generating scale


def test_training_on_csv_data(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 10, (60, 2))
    y = np.sin(X[:, 0]) + 0.1 * X[:, 1]
    data = tmp_path / "data.csv"
    with open(data, "w") as fh:
        fh.write("a,b,target\n")
        for row, t in zip(X, y):
            fh.write(f"{row[0]},{row[1]},{t}\n")
    cfg_path = write_config(tmp_path, "[experiment]\nkind = training\n[dataset]\nsource = csv\npath = data.csv\n"
                            "target = target\n[preconditioner]\nranks = 8\n[optimizer]\nmax_steps = 2\nn_probes = 4\n")
    cfg = ExperimentConfig.load(cfg_path)
    outputs = run_experiment(cfg, tmp_path / "out")
    assert "dataset hash:" in open(outputs[-1]).read()
    assert json.load(open(outputs[1]))["y_std"] != 1.0


def test_cli_verbs_and_seed_override(tmp_path, capsys):
    cfg = write_config(tmp_path, "[dataset]\nn = 30\n")
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "s"), "--seed", "9"]) == 0
    printed = capsys.readouterr().out.split()
    assert any(p.endswith("dataset.csv") for p in printed)
    summary = open(tmp_path / "s" / "run_summary.txt").read()
    assert "experiment: synth" in summary and "seed: 9" in summary
    assert json.load(open(tmp_path / "s" / "truth.json"))["n"] == 30


def test_cli_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "o")
    assert main(["train", "--config", str(tmp_path / "missing.ini"), "--out", out]) == 1
    assert main(["train", "--config", write_config(tmp_path, "[oops]\nx = 1\n"), "--out", out]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["quality", "--out", out]) == 1
    # a kernel matrix that is numerically singular makes the dense oracle fail
    singular = write_config(tmp_path, "[dataset]\nn = 200\n[kernel]\nlengthscale = 50\nnoise = 1e-300\n"
                            "[probes]\ncounts = 2\nrepetitions = 1\n", "singular.ini")
    assert main(["bias-variance", "--config", singular, "--out", out]) == 2
    err = capsys.readouterr().err
    assert "input error" in err and "numerical failure" in err


def test_thread_limit_variable(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, "[dataset]\nn = 10\n")
    monkeypatch.setenv("PRECONDGP_NUM_THREADS", "zero")
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "t")]) == 1
    monkeypatch.setenv("PRECONDGP_NUM_THREADS", "1")
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "t")]) == 0


def test_console_script_runs(tmp_path):
    cfg = write_config(tmp_path, "[dataset]\nn = 10\n")
    proc = subprocess.run([sys.executable, "-m", "precondgp.cli", "synth", "--config", cfg, "--out",
                           str(tmp_path / "m")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert os.path.exists(tmp_path / "m" / "dataset.csv")
