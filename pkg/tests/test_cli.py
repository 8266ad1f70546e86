import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from optotomo import __version__, cli
from optotomo.config import config_from_mapping
from optotomo.filtering import read_metadata
from optotomo.states import load_density_text

PARAMS = 'gamma = 0.5\nn_th = 0.3\nmu = 50.0\neta = 0.9\nchi = {chi}\n'


def _write(tmp_path, name="c.toml", chi=8.0, schedule='tau = 0.0\nT = 2.0\ntime_units = "measurement"',
           run="n_trials = 200\nn_phases = 10\nsampler = \"povm\"\nrepetitions = 2", truth='kind = "coherent"\nalpha_re = 1.0',
           extra=""):
    path = tmp_path / name
    path.write_text(
        f'output_dir = "out"\n[params]\n{PARAMS.format(chi=chi)}\n[schedule]\n{schedule}\n'
        f'[run]\n{run}\n[truth]\n{truth}\n{extra}'
    )
    return path


def _read_table(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def test_analytic_table_saturation(tmp_path):
    path = _write(tmp_path, schedule='tau = 40.0\nT = "inf"',
                  extra='[analytic]\naxis = "mu"\nstart = 1e-7\nstop = 1e-6\nnum = 2\n')
    assert cli.main(["analytic", str(path)]) == 0
    rows = _read_table(tmp_path / "out" / "analytic.csv")
    first = rows[0]
    for key in ("sigma2_Y_zero_one_step", "sigma2_Y_zero_two_step"):
        assert float(first[key]) == pytest.approx(8.3 / 15, rel=1e-4)
    assert float(first["chi_het"]) == pytest.approx(1.3)
    meta = read_metadata(tmp_path / "out" / "analytic.csv")
    assert meta["tool_version"] == __version__ and len(meta["config_hash"]) == 16


def test_analytic_table_divergence_below_oscillation(tmp_path):
    path = _write(tmp_path, schedule='tau = 1e9\nT = "inf"',
                  extra='[analytic]\naxis = "chi"\nstart = 0.1\nstop = 0.4\nnum = 4\n')
    cfg = cli.load_config(path)
    for row in cli.analytic_table(cfg):
        assert math.isinf(row["sigma2_Y_zero_two_step"])
        assert math.isfinite(row["sigma2_Y_zero_one_step"])


def test_pipeline_outputs_and_determinism(tmp_path):
    path = _write(tmp_path)
    assert cli.main(["pipeline", str(path)]) == 0
    out = tmp_path / "out"
    report = json.loads((out / "report.json").read_text())
    assert len(report["repetitions"]) == 2 and report["fidelity_mean"] > 0.9
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["stages"]) >= {"simulate", "reconstruct"}
    assert manifest["tool_version"] == __version__
    for name in ("povm.csv", "rho.csv", "wigner.csv", "iterations.csv"):
        assert (out / "rep000" / name).exists()
        head = "".join((out / "rep000" / name).read_text().splitlines(keepends=True)[:3])
        assert "config_hash=" in head
    rho = load_density_text(out / "rep000" / "rho.csv")
    assert cli.main(["reconstruct", str(path)]) == 0
    assert np.array_equal(load_density_text(out / "rep000" / "rho.csv"), rho)
    other = tmp_path / "again"
    assert cli.main(["pipeline", str(path), "-o", str(other)]) == 0
    assert (other / "rep001" / "povm.csv").read_text() == (out / "rep001" / "povm.csv").read_text()


def test_sde_pipeline_and_contract(tmp_path):
    run = 'n_trials = 6\nn_phases = 3\nsampler = "sde"'
    path = _write(tmp_path, schedule='tau = 0.0\nT = 0.05', run=run)
    assert cli.main(["simulate", str(path)]) == 0
    assert len(list((tmp_path / "out" / "rep000" / "records").glob("*.npz"))) == 6
    assert cli.main(["filter", str(path)]) == 0
    # same output directory, different physics: the stored records must be refused
    changed = _write(tmp_path, name="d.toml", chi=9.0, schedule='tau = 0.0\nT = 0.05', run=run)
    assert cli.main(["filter", str(changed)]) == cli.EXIT_CONTRACT
    assert cli.main(["reconstruct", str(changed)]) == cli.EXIT_CONTRACT


def test_missing_records_refused(tmp_path):
    path = _write(tmp_path, schedule='tau = 0.0\nT = 0.05', run='n_trials = 4\nsampler = "sde"')
    assert cli.main(["filter", str(path)]) == cli.EXIT_CONTRACT


def test_config_errors(tmp_path):
    assert cli.main(["analytic", str(tmp_path / "nope.toml")]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.toml"
    bad.write_text("[params]\ngamma = 0.5\nn_th = 0.3\nmu = 1.0\nbogus = 2\n")
    assert cli.main(["pipeline", str(bad)]) == cli.EXIT_CONFIG


def test_truncation_exit_code(tmp_path):
    path = _write(tmp_path, chi=40.0, schedule='tau = 6.0\nT = 2.0\ntime_units = "respective"',
                  run="n_trials = 20\nn_phases = 4", extra="[reconstruct]\ndim = 2\n")
    assert cli.main(["pipeline", str(path)]) == cli.EXIT_TRUNCATION


def test_validate(tmp_path, monkeypatch):
    path = _write(tmp_path, schedule='tau = 0.0\nT = 0.05', run='n_trials = 40\nn_phases = 4\nsampler = "sde"')
    assert cli.main(["validate", str(path)]) == 0
    result = json.loads((tmp_path / "out" / "validate.json").read_text())
    assert result["passed"] and result["n_trials"] == 40
    monkeypatch.setattr(cli, "validate_samplers", lambda cfg, n_trials=None: {"passed": False, "z_max": 4.0})
    assert cli.main(["validate", str(path)]) == cli.EXIT_VALIDATION


def test_gnuplot(tmp_path):
    path = _write(tmp_path)
    assert cli.main(["gnuplot", str(path)]) == 0
    assert "nonuniform matrix" in (tmp_path / "out" / "rep001" / "wigner.gp").read_text()
    assert "sigma2_Y_blue_two_step" in (tmp_path / "out" / "analytic.gp").read_text()


def test_moment_z():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=4000), rng.normal(size=4000)
    zm, zv = cli._moment_z(a, b)
    assert abs(zm) < 4 and abs(zv) < 4
    zm, zv = cli._moment_z(a + 0.5, 2 * b)
    assert abs(zm) > 4 and abs(zv) > 4


def test_truncation_dim():
    cfg = config_from_mapping({"params": {"gamma": 0.5, "n_th": 0.0, "mu": 1.0},
                               "truth": {"kind": "cat", "alpha_re": 2.0}})
    dim = cli.truncation_dim(cfg)
    amps = cli.truth_state(cfg, 80).amplitudes
    assert np.sum(np.abs(amps[:dim]) ** 2) > 1 - 1e-5 > np.sum(np.abs(amps[:dim - 1]) ** 2)


def test_console_entry_point():
    done = subprocess.run([sys.executable, "-m", "optotomo.cli", "--version"], capture_output=True, text=True)
    assert done.returncode == 0 and __version__ in done.stdout
