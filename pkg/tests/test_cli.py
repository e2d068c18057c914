import json
import subprocess
import sys

import pytest

from polyinj import cli
from polyinj.config import ConfigError, load

SMALL = {
    "counterexample": ["--samples", "100000", "--resolution", "64", "--set", "counterexample.export=500",
                       "--set", "counterexample.trace_samples=1024"],
    "degree": ["--map", "shear", "--samples", "100000", "--resolution", "64"],
    "identities": ["--h-list", "1/16,1/32,1/64", "--phi-family", "1,bump", "--g-family", "y"],
    "energy-probe": ["--trials", "1000"],
    "minimize": ["--mesh-h", "0.2", "--max-iter", "50", "--set", "minimize.check_samples=20000"],
}
OUTPUTS = {
    "counterexample": ["boundary.csv", "samples.csv", "histogram.csv", "report.json"],
    "degree": ["degree_field.csv", "histogram.csv", "report.json"],
    "identities": ["residuals.csv", "summary.json"],
    "energy-probe": ["convexity.csv", "coercivity.csv", "jensen.csv"],
    "minimize": ["solution.csv", "trace.csv", "summary.json"],
}


def run(sub, out, *extra):
    return cli.main([sub, "--out", str(out), *SMALL.get(sub, []), *extra])


@pytest.mark.parametrize("sub", sorted(OUTPUTS))
def test_subcommand_outputs(sub, tmp_path, capsys):
    assert run(sub, tmp_path) == 0
    for name in OUTPUTS[sub] + ["manifest.json"]:
        assert (tmp_path / name).is_file(), name
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["subcommand"] == sub and man["exit_code"] == 0
    assert man["backend"] in ("cython", "numpy") and man["outputs"] == OUTPUTS[sub]
    assert set(man["versions"]) >= {"polyinj", "numpy", "python"}


def test_selftest_subcommand(tmp_path, capsys):
    assert cli.main(["algebra-selftest", "--out", str(tmp_path)]) == 0
    assert "32 checks, 0 failures" in capsys.readouterr().out
    rows = (tmp_path / "selftest.csv").read_text().splitlines()
    assert rows[0] == "check,d,cases,max_err,tol,passed" and len(rows) == 33


def test_degree_report_fields(tmp_path, capsys):
    run("degree", tmp_path)
    rep = json.loads((tmp_path / "report.json").read_text())
    assert {"gamma", "overlap_area", "injective_ae", "deg_Nu_agreement"} <= set(rep)
    assert rep["gamma"] == 1 and rep["injective_ae"]


def test_identities_csv_columns(tmp_path, capsys):
    run("identities", tmp_path)
    head = (tmp_path / "residuals.csv").read_text().splitlines()[0]
    assert head == "map,phi,g,h,R_int,R_bdy,surface_term"
    out = capsys.readouterr().out
    assert "R_int order" in out


def test_minimize_columns(tmp_path, capsys):
    run("minimize", tmp_path, "--class", "a2", "--set", "energy.U=membrane")
    assert (tmp_path / "solution.csv").read_text().startswith("vertex,X_ref,Y_ref,x_def,y_def\n")
    assert (tmp_path / "trace.csv").read_text().startswith("iter,energy,grad_norm,min_det\n")
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["class"] == "a2" and s["constraint_residual"] <= 1e-12


@pytest.mark.parametrize("argv", [
    ["counterexample", "--alpha", "2.0"],
    ["degree", "--set", "degree.bogus=1"],
    ["degree", "--set", "noequals"],
    ["minimize", "--mesh-h", "-1"],
    ["identities", "--map", "no-such-map", "--h-list", "1/8,1/16,1/32"],
    ["degree", "--config", "/nonexistent/file.cfg"],
    ["minimize", "--set", "domain.shape=unit-disk", "--mesh-h", "0.3"],
])
def test_invalid_input_exit_2(argv, tmp_path, capsys):
    assert cli.main(argv + ["--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as ei:
        cli.main(["frobnicate"])
    assert ei.value.code == 2


def test_internal_error_exit_1(tmp_path, monkeypatch, capsys):
    def boom(run):
        raise RuntimeError("kaput")
    monkeypatch.setitem(cli.HANDLERS, "energy-probe", boom)
    assert cli.main(["energy-probe", "--out", str(tmp_path)]) == 1
    assert json.loads((tmp_path / "manifest.json").read_text())["exit_code"] == 1


def test_config_file_and_manifest_rerun(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[identities]\nh_list = 1/16 1/32 1/64\nphi_family = x1x2\ng_family = quad\n\n[run]\nseed = 7\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["identities", "--config", str(cfg), "--out", str(a)]) == 0
    man = json.loads((a / "manifest.json").read_text())
    assert man["config"]["run.seed"] == 7 and man["config"]["identities.phi_family"] == ["x1x2"]
    assert cli.main(["identities", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert (a / "residuals.csv").read_bytes() == (b / "residuals.csv").read_bytes()


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load(None, {"energy.nope": 1})
    with pytest.raises(ConfigError):
        load(None, {"run.threads": "-1"})
    bad = tmp_path / "bad.cfg"
    bad.write_text("this is not a key value line\n")
    with pytest.raises(ConfigError):
        load(bad)
    assert load(None, {"map.alpha": "2.9"})["map.alpha"] == 2.9
    assert load(None, {"identities.h_list": "1/4, 1/8 1/16"})["identities.h_list"] == [0.25, 0.125, 0.0625]


def test_out_env(tmp_path, monkeypatch):
    monkeypatch.setenv("POLYINJ_OUT", str(tmp_path / "envout"))
    assert str(load().out_dir) == str(tmp_path / "envout")


@pytest.mark.parametrize("sub", ["counterexample", "degree", "identities", "minimize", "energy-probe"])
def test_determinism_across_threads(sub, tmp_path, capsys):
    a, b = tmp_path / "t1", tmp_path / "t4"
    assert run(sub, a, "--threads", "1", "--seed", "3") == 0
    assert run(sub, b, "--threads", "4", "--seed", "3") == 0
    for name in OUTPUTS[sub]:
        if name.endswith(".csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "polyinj.cli", "energy-probe", "--trials", "1000", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert "planted_nonconvex" in out.stdout
