import json
import os

import numpy as np
import pytest

from asep2d.cli import main, read_kernel_file


@pytest.fixture()
def kernel_file(tmp_path):
    path = tmp_path / "drift.k"
    path.write_text("# axis drift\n1 0 3/4\n-1 0 1/4\n0 1 1/4\n0 -1 1/4\n")
    return str(path)


@pytest.fixture()
def sym_file(tmp_path):
    path = tmp_path / "sym.k"
    path.write_text("1 0 0.25\n-1 0 0.25\n0 1 0.25\n0 -1 0.25\n")
    return str(path)


def _cfg(tmp_path, kernel, **overrides):
    base = {"kernel": kernel, "rho": "0.5", "L1": "6", "L2": "6",
            "horizon": "2.0", "replicas": "300", "seed": "9",
            "outdir": str(tmp_path / "out")}
    base.update({k: str(v) for k, v in overrides.items()})
    lines = ["[run]"] + [f"{k} = {v}" for k, v in base.items()]
    path = tmp_path / "run.ini"
    path.write_text("\n".join(lines) + "\n")
    return str(path), base["outdir"]


def _read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# manifest=")
    header = lines[1].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[2:]])
    return header, data


def test_kernel_file_parsing(kernel_file):
    k = read_kernel_file(kernel_file)
    assert float(k.m1) == 0.5 and k.total_rate == 1.5


def test_kernel_command(kernel_file, capsys):
    assert main(["kernel", kernel_file]) == 0
    out = capsys.readouterr().out
    assert "drift m = (0.5, 0)" in out
    assert "comparison" in out


def test_simulate_csv_contract(tmp_path, sym_file):
    cfg, outdir = _cfg(tmp_path, sym_file)
    assert main(["simulate", "-c", cfg]) == 0
    header, data = _read_csv(os.path.join(outdir, "series.csv"))
    assert header == ["t", "sigma2", "sigma2_se", "p_return", "p_return_se",
                      "n_replicas"]
    assert np.all(data[:, 1] >= 0) and np.all(np.isnan(data[:, 3]))
    assert np.all(data[:, 5] == 300)
    manifest = json.load(open(os.path.join(outdir, "manifest.json")))
    assert manifest["command"] == "simulate" and "kernel_hash" in manifest


def test_coupled_walker_and_displacement(tmp_path, sym_file):
    cfg, outdir = _cfg(tmp_path, sym_file)
    assert main(["coupled", "-c", cfg, "--set", "coupled.walker=true"]) == 0
    header, data = _read_csv(os.path.join(outdir, "series.csv"))
    assert np.all((0 <= data[:, 3]) & (data[:, 3] <= 1))
    dheader, ddata = _read_csv(os.path.join(outdir, "displacement.csv"))
    assert dheader == ["t", "mean_R1", "se_R1", "mean_R2", "se_R2"]


def test_walker_mode_guard(tmp_path, kernel_file):
    cfg, outdir = _cfg(tmp_path, kernel_file)
    assert main(["coupled", "-c", cfg, "--set", "coupled.walker=true"]) == 2


def test_rerun_byte_identical(tmp_path, sym_file):
    cfg, outdir = _cfg(tmp_path, sym_file)
    assert main(["simulate", "-c", cfg]) == 0
    first = open(os.path.join(outdir, "series.csv"), "rb").read()
    out2 = str(tmp_path / "out2")
    assert main(["simulate", "-c", cfg, "--outdir", out2]) == 0
    second = open(os.path.join(out2, "series.csv"), "rb").read()
    assert first == second


def test_exact_check_exit_code(tmp_path):
    outdir = str(tmp_path / "ex")
    assert main(["exact-check", "--outdir", outdir]) == 0
    report = open(os.path.join(outdir, "residuals.txt")).read()
    assert "PASS" in report and "factorization" in report


def test_bounds_and_fit_roundtrip(tmp_path, kernel_file):
    outdir = str(tmp_path / "bounds")
    assert main(["bounds", "--outdir", outdir, "--set", "lambda.points=6",
                 "--set", "lambda.min=1e-6", "--set",
                 f"run.kernel={kernel_file}"]) == 0
    header, data = _read_csv(os.path.join(outdir, "bounds.csv"))
    assert header[:3] == ["lambda", "bound_general", "err_general"]
    assert np.all(data[:, 1] > 0)
    # divergence fit on the produced curve
    fit_cfg = tmp_path / "fit.ini"
    fit_cfg.write_text(
        f"[run]\noutdir = {tmp_path / 'fit'}\n"
        f"[fit]\ninput = {outdir}/bounds.csv\nxcol = lambda\n"
        "ycol = bound_general\nmode = divergence\n")
    assert main(["fit", "-c", str(fit_cfg)]) == 0
    report = open(tmp_path / "fit" / "fit_report.txt").read()
    assert "c1" in report


def test_fit_scaling_from_csv(tmp_path):
    csv = tmp_path / "data.csv"
    t = np.geomspace(1, 100, 20)
    rows = "\n".join(f"{a},{2.0 * a ** 1.25}" for a in t)
    csv.write_text("t,y\n" + rows + "\n")
    cfg = tmp_path / "fit.ini"
    cfg.write_text(f"[run]\noutdir = {tmp_path / 'sf'}\n"
                   f"[fit]\ninput = {csv}\nxcol = t\nycol = y\nmodel = power\n")
    assert main(["fit", "-c", str(cfg)]) == 0
    report = open(tmp_path / "sf" / "fit_report.txt").read()
    assert "exponent = 1.25" in report


def test_invalid_config_error_record(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[run]\nrho = 1.5\nkernel = nope.k\n")
    assert main(["simulate", "-c", str(cfg)]) == 2
    err = capsys.readouterr().err
    record = json.loads(err.strip().splitlines()[-1])
    assert record["error"] in ("ConfigInvalid", "ValueError")
