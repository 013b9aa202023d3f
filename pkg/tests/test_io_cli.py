"""File formats and the batch-pipeline CLI: schemas, determinism, exit codes."""

import json

import numpy as np
import pytest

import grayqc.whitebox
from grayqc.cli import EXIT_CHECK, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from grayqc.io import (
    noise_from_dict,
    noise_to_dict,
    read_dataset,
    sha256_file,
    write_csv,
    write_dataset,
)
from grayqc.noise import OU, RTN, TimeGrid
from grayqc.simulator import SimConfig, generate_dataset
from grayqc.whitebox import assemble_vo

TINY = {
    "noise": "rtn",
    "g_values": [0.1],
    "profile": "desk",
    "seed": 42,
    "sim": {"steps": 300, "realizations": 60, "count": 40, "verify_realizations": 100},
    "model": {
        "d_model": 8,
        "n_heads": 2,
        "ff_dim": 16,
        "branch_hidden": [8, 4],
        "refine_hidden": 8,
        "whitebox_steps": 300,
    },
    "train": {"epochs": 10, "batch_size": 16},
    "control": {"restarts": 1, "max_iterations": 15},
}


def _write_config(tmp_path, payload=TINY):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return str(path)


def test_noise_dict_round_trip():
    for noise in (RTN(1.5), OU(2.0, 4.0)):
        assert noise_from_dict(noise_to_dict(noise)) == noise
    with pytest.raises(ValueError):
        noise_from_dict({"kind": "pink"})


def test_dataset_round_trip(tmp_path):
    config = SimConfig(RTN(1.0), 0.1, seed=3, grid=TimeGrid(3.2, 150), realizations=30)
    records = list(generate_dataset(4, config, seed=9))
    path = tmp_path / "ds.jsonl"
    write_dataset(path, records, config, seed=9, count=4)
    header, loaded = read_dataset(path)
    assert header["schema"] == "grayqc.dataset.v1"
    assert header["count"] == 4
    assert len(loaded) == 4
    for a, b in zip(records, loaded):
        assert np.array_equal(a.normalized_input, b.normalized_input)
        assert np.array_equal(a.expectations, b.expectations)
        assert np.array_equal(a.fidelities, b.fidelities)
        assert a.noise == b.noise and a.seed == b.seed


def test_write_csv_formatting(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["a", "b"], [[1.0, "x"], [0.123456789012345, "y"]])
    lines = path.read_text().splitlines()
    assert lines[0] == "a,b"
    assert lines[1] == "1,x"
    assert lines[2].startswith("0.123456789012")


def test_cli_pipeline_and_determinism(tmp_path):
    cfg = _write_config(tmp_path)
    out1, out2 = str(tmp_path / "r1"), str(tmp_path / "r2")
    for out in (out1, out2):
        assert main(["generate", "--config", cfg, "--out", out]) == EXIT_OK
        assert main(["train", "--config", cfg, "--out", out]) == EXIT_OK
        assert main(["optimize", "--config", cfg, "--out", out]) == EXIT_OK
        assert main(["report", "--config", cfg, "--out", out]) == EXIT_OK
    for name in (
        "dataset_rtn_g0.1.jsonl",
        "model_rtn_g0.1.gqck",
        "metrics_rtn_g0.1.json",
        "optimize_rtn_g0.1.json",
        "mse_rtn.csv",
        "prediction_error_rtn.csv",
        "fidelity_rtn.csv",
        "fidelity_vs_g_rtn.csv",
    ):
        assert sha256_file(f"{out1}/{name}") == sha256_file(f"{out2}/{name}"), name


def test_cli_output_schemas(tmp_path):
    cfg = _write_config(tmp_path)
    out = str(tmp_path / "r")
    main(["generate", "--config", cfg, "--out", out])
    main(["train", "--config", cfg, "--out", out])
    metrics = json.loads((tmp_path / "r" / "metrics_rtn_g0.1.json").read_text())
    assert metrics["schema"] == "grayqc.metrics.v1"
    assert len(metrics["test_mse"]) == 6
    assert "run" in metrics and "seed" in metrics
    mse = (tmp_path / "r" / "mse_rtn.csv").read_text().splitlines()
    assert mse[0] == "g,split,I,X,Y,Z,H,RX_PI_4"
    assert len(mse) == 3  # header + train/test rows for one g
    pred = (tmp_path / "r" / "prediction_error_rtn.csv").read_text().splitlines()
    assert pred[0] == "g,prediction_error"
    main(["optimize", "--config", cfg, "--out", out])
    fid = (tmp_path / "r" / "fidelity_rtn.csv").read_text().splitlines()
    assert fid[0] == "gate,g=0.1"
    assert len(fid) == 7
    results = json.loads((tmp_path / "r" / "optimize_rtn_g0.1.json").read_text())
    assert results["schema"] == "grayqc.results.v1"
    for entry in results["gates"]:
        assert {"gate", "input", "emulator_fidelity", "verified_fidelity", "restarts"} <= set(entry)


def test_cli_usage_errors(tmp_path):
    cfg = _write_config(tmp_path)
    # training without a dataset is a usage error
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "none")]) == EXIT_USAGE
    assert main(["optimize", "--config", cfg, "--out", str(tmp_path / "none")]) == EXIT_USAGE
    assert main(["report", "--config", cfg, "--out", str(tmp_path / "none")]) == EXIT_USAGE
    # bad flag values
    assert main(["generate", "--config", cfg, "--g", "abc", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["generate", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        main(["generate", "--badflag"])
    assert err.value.code == EXIT_USAGE
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_cli_io_error(tmp_path):
    cfg = _write_config(tmp_path)
    blocker = tmp_path / "blocked"
    blocker.write_text("file, not a directory")
    assert main(["generate", "--config", cfg, "--out", str(blocker)]) == EXIT_IO


def test_cli_flag_overrides(tmp_path):
    payload = dict(TINY)
    payload["sim"] = dict(TINY["sim"], count=3)
    cfg = _write_config(tmp_path, payload)
    out = tmp_path / "o"
    assert main(["generate", "--config", cfg, "--noise", "ou", "--g", "0.2", "--out", str(out)]) == EXIT_OK
    header, records = read_dataset(out / "dataset_ou_g0.2.jsonl")
    assert len(records) == 3
    assert header["sim_config"]["noise"]["kind"] == "ou"
    assert header["sim_config"]["coupling"] == 0.2


def test_selftest_exit_codes(monkeypatch):
    import grayqc.selftest as st

    monkeypatch.setattr(st, "_CHECKS", [("ok", lambda: (True, "fine"))])
    assert main(["selftest"]) == EXIT_OK
    monkeypatch.setattr(st, "_CHECKS", [("bad", lambda: (False, "broken"))])
    assert main(["selftest"]) == EXIT_CHECK


def test_selftest_catches_injected_vo_sign_error(monkeypatch):
    # negative control: corrupt V_O assembly and require the chi round-trip
    # oracle to notice
    from grayqc.selftest import _check_chi_round_trip

    real = assemble_vo

    def broken(params, observable_index):
        v = real(params, observable_index)
        if observable_index == 1:
            v = -v
        return v

    monkeypatch.setattr(grayqc.whitebox, "assemble_vo", broken)
    passed, detail = _check_chi_round_trip()
    assert not passed


def test_profile_dataset_counts():
    from grayqc.cli import RunConfig

    run = RunConfig(profile="paper")
    assert run.dataset_count(0.1) == 5000
    assert run.dataset_count(0.5) == 10000  # larger set at the strongest coupling
    desk = RunConfig(profile="desk")
    assert desk.dataset_count(0.1) == 500
    assert desk.sim_config(0.1, seed=1).grid.steps == 1000
    assert desk.sim_config(0.1, seed=1).realizations == 500


def test_run_config_validation():
    from grayqc.cli import RunConfig, UsageError

    with pytest.raises(UsageError):
        RunConfig(noise="pink")
    with pytest.raises(UsageError):
        RunConfig(profile="server")
    with pytest.raises(UsageError):
        RunConfig(g_values=(0.1, -0.2))
