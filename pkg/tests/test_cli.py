"""Tests for the command-line front end: subcommands, config handling, file
outputs, exit codes, and reproducibility."""

import csv
import json
import os

import numpy as np
import pytest

from mibma.cli import main, read_dataset_csv, write_dataset_csv

from conftest import make_gaussian_data, scenario_sample_for_n, with_missing


def _write_config(path, **kv):
    with open(path, "w") as fh:
        fh.write("# smoke config\n")
        for k, v in kv.items():
            fh.write(f"{k} = {v}\n")


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def toy_fit_csv(tmp_path):
    # the 4-point line dataset: (0,0),(1,1),(2,1),(3,2), all observed, pi=0.5
    path = tmp_path / "toy.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "delta", "pi", "x1"])
        for xi, yi in [(0, 0), (1, 1), (2, 1), (3, 2)]:
            w.writerow([yi, 1, 0.5, xi])
    return path


# --------------------------------------------------------------------------- #
# simulate
# --------------------------------------------------------------------------- #


def test_simulate_smoke_and_determinism(tmp_path):
    cfg = tmp_path / "sim.cfg"
    _write_config(cfg, scenario="I", pi_coef="0.5,-0.2", n_population=600, p_free=2)
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    args = [
        "simulate", "--config", str(cfg), "--reps", "2", "--seed", "7",
        "--m-draws", "4", "--burn-in", "10", "--thin", "1", "--threads", "1",
    ]
    assert main(args + ["--out", str(out1)]) == 0
    metrics = _read_csv(out1 / "metrics.csv")
    assert metrics[0][0] == "scenario"
    methods = {row[1] for row in metrics[1:]}
    assert methods == {"MI_TRUE", "MI_FULL", "MI_BMA"}

    assert main(args + ["--out", str(out2)]) == 0
    assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()
    assert (out1 / "run_manifest.json").read_bytes() == (
        out2 / "run_manifest.json"
    ).read_bytes()


def test_simulate_manifest_records_resolved_config(tmp_path):
    cfg = tmp_path / "sim.cfg"
    _write_config(cfg, scenario="I", pi_coef="0.5,-0.2", n_population=600, p_free=2)
    out = tmp_path / "run"
    assert main([
        "simulate", "--config", str(cfg), "--reps", "2", "--seed", "3",
        "--m-draws", "4", "--burn-in", "5", "--thin", "1", "--threads", "1",
        "--out", str(out),
    ]) == 0
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["scenario_config"]["n_population"] == 600
    assert manifest["scenario_config"]["pi_coef"] == [0.5, -0.2]
    assert manifest["run"]["seed"] == 3
    assert "selection_rule" in manifest["run"]
    assert manifest["versions"]["kernel_backend"] in ("numba", "numpy")


def test_simulate_flag_overrides_config(tmp_path):
    cfg = tmp_path / "sim.cfg"
    _write_config(
        cfg, scenario="I", pi_coef="0.5,-0.2", n_population=600, p_free=2, reps=99
    )
    out = tmp_path / "run"
    assert main([
        "simulate", "--config", str(cfg), "--reps", "2", "--seed", "1",
        "--m-draws", "4", "--burn-in", "5", "--thin", "1", "--threads", "1",
        "--out", str(out),
    ]) == 0
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["run"]["replications"] == 2


def test_simulate_save_draws(tmp_path):
    cfg = tmp_path / "sim.cfg"
    _write_config(cfg, scenario="I", pi_coef="0.5,-0.2", n_population=600, p_free=2)
    out = tmp_path / "run"
    assert main([
        "simulate", "--config", str(cfg), "--reps", "2", "--seed", "1",
        "--m-draws", "4", "--burn-in", "5", "--thin", "1", "--threads", "1",
        "--out", str(out), "--save-draws",
    ]) == 0
    assert (out / "draws_0.csv").exists() and (out / "draws_1.csv").exists()


def test_simulate_flag_only_invocation_at_desk_defaults(tmp_path):
    # the documented quick start: defaults N=5000, p_free=6, M=50
    out = tmp_path / "run"
    code = main(
        ["simulate", "--scenario", "I", "--reps", "2", "--seed", "7",
         "--threads", "1", "--out", str(out)]
    )
    assert code == 0
    rows = _read_csv(out / "metrics.csv")
    assert {row[1] for row in rows[1:]} == {"MI_TRUE", "MI_FULL", "MI_BMA"}


def test_simulate_missing_config_file_exits_2(tmp_path, capsys):
    code = main(["simulate", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path)])
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_simulate_requires_scenario(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path)]) == 2


def test_simulate_rejects_bad_override(tmp_path):
    assert main(["simulate", "--scenario", "I", "--reps", "0", "--out", str(tmp_path)]) == 2


def test_usage_error_from_argparse_is_2():
    assert main(["simulate", "--scenario", "III"]) == 2


# --------------------------------------------------------------------------- #
# fit
# --------------------------------------------------------------------------- #


def test_fit_toy_matches_normal_equations(tmp_path, toy_fit_csv):
    out = tmp_path / "fit"
    assert main(["fit", "--data", str(toy_fit_csv), "--out", str(out)]) == 0
    rows = _read_csv(out / "fit.csv")
    assert rows[0] == ["parameter", "estimate", "std_error"]
    by = {r[0]: float(r[1]) for r in rows[1:]}
    x = np.column_stack([np.ones(4), [0.0, 1.0, 2.0, 3.0]])
    y = np.array([0.0, 1.0, 1.0, 2.0])
    oracle = np.linalg.solve(x.T @ x, x.T @ y)
    assert by["beta0"] == pytest.approx(oracle[0], abs=1e-10)
    assert by["beta1"] == pytest.approx(oracle[1], abs=1e-10)
    assert "log_sigma2" in by


def test_fit_mask_zero_gives_weighted_mean(tmp_path):
    data = make_gaussian_data(n=30, p_free=2, seed=44)
    path = tmp_path / "d.csv"
    write_dataset_csv(data, path)
    out = tmp_path / "fit"
    assert main(["fit", "--data", str(path), "--mask", "0x0", "--out", str(out)]) == 0
    rows = _read_csv(out / "fit.csv")
    by = {r[0]: float(r[1]) for r in rows[1:]}
    assert by["beta0"] == pytest.approx(
        float(np.sum(data.w * data.y) / np.sum(data.w)), abs=1e-10
    )
    assert by["beta1"] == 0.0 and by["beta2"] == 0.0


def test_fit_missing_delta_column_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "pi", "x1"])
        w.writerow([1.0, 0.5, 2.0])
    assert main(["fit", "--data", str(path), "--out", str(tmp_path)]) == 2
    assert "delta" in capsys.readouterr().err


def test_fit_malformed_cell_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "delta", "pi", "x1"])
        w.writerow(["oops", 1, 0.5, 2.0])
    assert main(["fit", "--data", str(path), "--out", str(tmp_path)]) == 2
    assert "malformed" in capsys.readouterr().err


def test_fit_nonexistent_data_exits_2(tmp_path):
    assert main(["fit", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2


# --------------------------------------------------------------------------- #
# mi
# --------------------------------------------------------------------------- #


def _sample_csv(tmp_path, n_target=400, missing=True, seed=2):
    sample = scenario_sample_for_n("I", n_target, p_free=2, seed=seed, complete=not missing)
    if missing:
        y = sample.y.copy()
        y[sample.delta == 0] = np.nan
        sample = sample.with_y(y)
    path = tmp_path / "sample.csv"
    write_dataset_csv(sample, path)
    return path, sample


def test_mi_single_on_complete_data_matches_fit(tmp_path):
    path, sample = _sample_csv(tmp_path, missing=False)
    out = tmp_path / "mi"
    assert main([
        "mi", "--data", str(path), "--mode", "single", "--mask", "0x3",
        "--m-draws", "6", "--burn-in", "5", "--thin", "1", "--seed", "4",
        "--out", str(out),
    ]) == 0
    mi_rows = _read_csv(out / "mi.csv")
    est = {r[0]: (float(r[1]), float(r[2])) for r in mi_rows[1:]}
    fit_out = tmp_path / "fitref"
    assert main(["fit", "--data", str(path), "--mask", "0x3", "--out", str(fit_out)]) == 0
    ref = {r[0]: float(r[1]) for r in _read_csv(fit_out / "fit.csv")[1:]}
    for name, (e, v) in est.items():
        assert abs(e - ref[name]) <= 3 * np.sqrt(max(v, 1e-12)) + 1e-9


def test_mi_bma_selects_true_variable(tmp_path):
    path, _ = _sample_csv(tmp_path, n_target=2000, missing=True, seed=6)
    out = tmp_path / "mi"
    assert main([
        "mi", "--data", str(path), "--mode", "bma",
        "--m-draws", "20", "--burn-in", "40", "--thin", "2", "--seed", "5",
        "--out", str(out),
    ]) == 0
    freq = {r[0]: float(r[1]) for r in _read_csv(out / "models.csv")[1:]}
    assert freq["x1"] > 0.9


def test_mi_reproducible_with_same_seed(tmp_path):
    path, _ = _sample_csv(tmp_path, seed=7)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main([
            "mi", "--data", str(path), "--mode", "bma",
            "--m-draws", "4", "--burn-in", "5", "--thin", "1", "--seed", "9",
            "--out", str(out), "--save-draws",
        ]) == 0
        outs.append(out)
    for fname in ("mi.csv", "models.csv", "draws.csv"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


def test_mi_single_requires_mask(tmp_path, capsys):
    path, _ = _sample_csv(tmp_path, seed=8)
    assert main(["mi", "--data", str(path), "--mode", "single", "--out", str(tmp_path)]) == 2
    assert "--mask" in capsys.readouterr().err


def test_mi_env_seed_fallback(tmp_path, monkeypatch):
    path, _ = _sample_csv(tmp_path, seed=9)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        monkeypatch.setenv("MIBMA_SEED", "31")
        assert main([
            "mi", "--data", str(path), "--mode", "single", "--mask", "0x1",
            "--m-draws", "4", "--burn-in", "5", "--thin", "1", "--out", str(out),
        ]) == 0
        outs.append(out)
    assert (outs[0] / "mi.csv").read_bytes() == (outs[1] / "mi.csv").read_bytes()


# --------------------------------------------------------------------------- #
# dataset CSV round trip
# --------------------------------------------------------------------------- #


def test_dataset_csv_roundtrip(tmp_path):
    data = with_missing(make_gaussian_data(n=25, p_free=3, seed=50), rate=0.3, seed=1)
    path = tmp_path / "d.csv"
    write_dataset_csv(data, path)
    back = read_dataset_csv(str(path), "gaussian")
    assert np.array_equal(back.delta, data.delta)
    assert np.allclose(back.x, data.x, atol=0)
    assert np.allclose(back.pi, data.pi, atol=0)
    obs = data.delta == 1
    assert np.allclose(back.y[obs], data.y[obs], atol=0)
    assert np.all(np.isnan(back.y[~obs]))


def test_dataset_csv_rejects_out_of_order_covariates(tmp_path):
    path = tmp_path / "bad.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "delta", "pi", "x2", "x1"])
        w.writerow([1.0, 1, 0.5, 2.0, 1.0])
    with pytest.raises(Exception):
        read_dataset_csv(str(path), "gaussian")
