from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from aflsim.cli import main
from aflsim.config import ConfigFileError, config_hash, dump_config, load_config, parse_assignments
from aflsim.metrics import load_metrics
from aflsim.orchestrator import ExperimentConfig

SMALL = "rounds=8\nI=2\nC=5\nn=400\nd=3\nmin_per_client=10  # keep shards feasible\n"


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def test_parse_types_and_comments():
    values = parse_assignments(["# header", "C = 4", "gamma0=0.5 # trailing", "data_seed=none",
                                "record_iterates=true", "model=svm"])
    assert values == {"C": 4, "gamma0": 0.5, "data_seed": None, "record_iterates": True, "model": "svm"}


@pytest.mark.parametrize(
    "text,field,line",
    [("C=4\nnot a pair\n", "<syntax>", 2), ("colour=blue\n", "colour", 1), ("C=four\n", "C", 1),
     ("C=4\nC=5\n", "C", 2), ("model=tree\n", "model", 1)],
)
def test_parse_errors_point_at_line(tmp_path, text, field, line):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigFileError) as info:
        load_config(path)
    assert info.value.field == field and info.value.line == line
    assert f"bad.cfg:{line}" in str(info.value)


def test_hash_tracks_every_field():
    base = ExperimentConfig()
    h = config_hash(base)
    assert config_hash(ExperimentConfig()) == h
    for changes in ({"C": 11}, {"gamma0": 0.0011}, {"model": "svm"}, {"data_seed": 3}, {"record_iterates": True}):
        assert config_hash(base.replace(**changes)) != h
    assert load_config(None, parse_assignments(dump_config(base).splitlines())) == base


def test_run_writes_metrics_and_manifest(cfg_file, tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg_file), "--out", str(out)]) == 0
    log = load_metrics(out / "metrics.csv")
    assert len(log) == 8
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["rounds"] == 8 and manifest["seeds"] == [0]
    assert len(manifest["config_hash"]) == 64
    assert "metrics.csv" in manifest["files"] and (out / "plots" / "server_loss.csv").exists()


def test_run_is_byte_reproducible(cfg_file, tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path / name), "--seed", "3"]) == 0
    for f in ("metrics.csv", "metrics.json", "plots/energy_proxy.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_flags_override_file(cfg_file, tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg_file), "--set", "rounds=3", "--mode", "sync", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["rounds"] == 3 and manifest["config"]["mode"] == "sync"


def test_exit_codes(cfg_file, tmp_path, capsys):
    out = str(tmp_path / "x")
    assert main(["run", "--config", str(cfg_file), "--set", "fraction=0", "--out", out]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.cfg"), "--out", out]) == 2
    assert main(["run", "--config", str(cfg_file), "--set", "gamma0=1e5", "--set", "alpha=0", "--out", out]) == 3
    assert main(["verify", "sampl", "--out", out]) == 2
    assert main(["dance"]) == 2
    assert "fraction" in capsys.readouterr().err


def test_sweep_aggregate_matches_per_run_files(cfg_file, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(cfg_file), "--fractions", "0.2,0.8", "--seeds", "0,1",
                 "--out", str(out)]) == 0
    with (out / "aggregate.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    for frac in ("0.2", "0.8"):
        agg = np.array([float(r["mean_server_loss"]) for r in rows if r["fraction"] == frac])
        runs = [load_metrics(out / f"fraction_{frac}" / f"seed_{s}" / "metrics.csv").server_losses for s in (0, 1)]
        np.testing.assert_allclose(agg, np.mean(runs, axis=0), rtol=1e-15)


def test_sweep_single_run_equals_aggregate(cfg_file, tmp_path):
    out = tmp_path / "one"
    assert main(["sweep", "--config", str(cfg_file), "--fractions", "0.6", "--seeds", "4", "--out", str(out)]) == 0
    with (out / "aggregate.csv").open() as fh:
        agg = [float(r["mean_server_loss"]) for r in csv.DictReader(fh)]
    run = load_metrics(out / "fraction_0.6" / "seed_4" / "metrics.csv").server_losses
    assert np.array_equal(agg, run)


def test_sweep_parallel_is_identical(cfg_file, tmp_path, monkeypatch):
    args = ["sweep", "--config", str(cfg_file), "--fractions", "0.4", "--seeds", "0,1"]
    assert main(args + ["--out", str(tmp_path / "serial")]) == 0
    monkeypatch.setenv("AFL_SIM_THREADS", "2")
    assert main(args + ["--out", str(tmp_path / "parallel")]) == 0
    assert (tmp_path / "serial" / "aggregate.csv").read_bytes() == (tmp_path / "parallel" / "aggregate.csv").read_bytes()


def test_empty_lists_are_usage_errors(cfg_file, tmp_path):
    assert main(["sweep", "--config", str(cfg_file), "--fractions", "", "--seeds", "0", "--out", str(tmp_path)]) == 2
    assert main(["compare", "--config", str(cfg_file), "--seeds", ",", "--out", str(tmp_path)]) == 2


def test_compare_curves(cfg_file, tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(cfg_file), "--seeds", "0,1", "--out", str(out)]) == 0
    with (out / "compare.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8
    afl = np.mean([load_metrics(out / "afl" / f"seed_{s}" / "metrics.csv").server_losses for s in (0, 1)], axis=0)
    sync = np.mean([load_metrics(out / "sync" / f"seed_{s}" / "metrics.csv").server_losses for s in (0, 1)], axis=0)
    np.testing.assert_allclose([float(r["afl_mean"]) for r in rows], afl, rtol=1e-15)
    np.testing.assert_allclose([float(r["difference"]) for r in rows], afl - sync, rtol=1e-12, atol=1e-15)


def test_compare_without_staleness_has_zero_difference(cfg_file, tmp_path):
    out = tmp_path / "cmp0"
    assert main(["compare", "--config", str(cfg_file), "--set", "tau_max=0", "--seeds", "0,2", "--out", str(out)]) == 0
    with (out / "compare.csv").open() as fh:
        assert all(float(r["difference"]) == 0.0 for r in csv.DictReader(fh))


def test_verify_sampling_suite(tmp_path, capsys):
    assert main(["verify", "sampling", "--out", str(tmp_path)]) == 0
    reports = json.loads((tmp_path / "verify_sampling.json").read_text())
    assert reports and all(r["pass"] for r in reports)
    assert "PASS" in capsys.readouterr().out


def test_verify_failure_exit_code(tmp_path, monkeypatch):
    from aflsim import theory

    failing = theory.VerificationReport("fake", 1.0, 2.0, 0.0, 1, False)
    monkeypatch.setitem(theory._SUITE_FUNCS, "martingale", lambda seed, cache: [failing])
    assert main(["verify", "martingale", "--out", str(tmp_path)]) == 4
