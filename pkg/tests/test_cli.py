import csv
import json
import math
import shutil
import subprocess
import sys

import pytest

from stinteract.cli import main, parse_grid

from support import intercept_for, quad_grid, simulate_on, write_grid_files, write_pattern


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    grid = quad_grid(t_max=60.0)
    paths = write_grid_files(grid, d)
    sim = simulate_on(grid, [intercept_for(grid, 250), 0.3, -0.5], 0.5, 0.3, 3.0, seed=1, columns=("z1", "wk"))
    paths["events"] = write_pattern(sim.pattern, d / "events.csv")
    return paths


def grid_args(paths):
    return [
        "--window", str(paths["window"]),
        "--grid-cells", str(paths["cells"]),
        "--grid-periods", str(paths["periods"]),
        "--cell-geometry", str(paths["geometry"]),
    ]


def run(argv, out):
    code = main([*argv, "--out", str(out)])
    return code


def report(out, name):
    return json.loads((out / name).read_text())


def test_parse_grid():
    assert parse_grid("0:0.25:0.05") == [0.0, 0.05, 0.1, 0.15, 0.2, 0.25]
    assert parse_grid("1,2,7") == [1.0, 2.0, 7.0]


def test_knox_report(workspace, tmp_path):
    argv = ["knox", "--events", str(workspace["events"]), "--window", str(workspace["window"]), "--t-max", "60",
            "--delta-km", "0.3", "--tau-days", "3", "--B", "99", "--seed", "5"]
    assert run(argv, tmp_path) == 0
    rep = report(tmp_path, "knox_report.json")
    test = rep["result"]["test"]
    assert test["B"] == 99 and 0 < test["p_value"] <= 1
    assert test["p_value"] == (1 + test["exceedances"]) / 100
    assert rep["manifest"]["parameters"]["delta_km"] == 0.3
    assert len(rep["manifest"]["inputs"]["events"]["sha256"]) == 64
    assert (tmp_path / "knox_replicates.csv").exists()
    assert json.loads((tmp_path / "runtime.json").read_text())["threads"] == 1


def test_kfun_surface_csv(workspace, tmp_path):
    argv = ["kfun", "--events", str(workspace["events"]), "--window", str(workspace["window"]), "--t-max", "60",
            "--deltas", "0.1:0.3:0.1", "--taus", "1,3", "--B", "0"]
    assert run(argv, tmp_path) == 0
    with open(tmp_path / "kfun_surface.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["delta", "tau", "K", "Ks", "Kt", "D"]
    assert len(rows) == 1 + 3 * 2
    rep = report(tmp_path, "kfun_report.json")
    assert "test" not in rep["result"]
    assert rep["result"]["omnibus"] == pytest.approx(sum(float(r[5]) for r in rows[1:]))


def test_mantel_statistic_only(workspace, tmp_path):
    argv = ["mantel", "--events", str(workspace["events"]), "--window", str(workspace["window"]), "--t-max", "60", "--B", "0"]
    assert run(argv, tmp_path) == 0
    assert -1 <= report(tmp_path, "mantel_report.json")["result"]["test"]["mantel_r"] <= 1


def test_missing_column_exits_2(tmp_path, workspace, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,x,y\na,0.5,0.5\n")
    argv = ["knox", "--events", str(bad), "--window", str(workspace["window"]), "--t-max", "60",
            "--delta-km", "0.3", "--tau-days", "3"]
    assert run(argv, tmp_path / "o") == 2
    assert "'t'" in capsys.readouterr().err


def test_bad_option_exits_2(tmp_path, workspace):
    assert run(["knox", "--events", str(workspace["events"])], tmp_path) == 2


def test_fit_rate_ratio_table(workspace, tmp_path):
    argv = ["fit", "--events", str(workspace["events"]), *grid_args(workspace),
            "--delta-km", "0.3", "--tau-days", "3", "--pixel-residuals", "0.5", "--temporal-residuals"]
    assert run(argv, tmp_path) == 0
    res = report(tmp_path, "fit_report.json")["result"]
    terms = [r["term"] for r in res["fit"]["endemic"]]
    assert terms == ["(Intercept)", "z1", "wk"]
    for r in res["fit"]["endemic"]:
        assert r["RR"] == pytest.approx(math.exp(r["estimate"]))
    assert res["fit"]["lr_D"] >= -1e-6
    assert res["pixel_residuals"]["observed_total"] == res["data"]["n"]
    assert (tmp_path / "pixel_residuals.csv").exists() and (tmp_path / "temporal_residuals.csv").exists()


def test_fit_endemic_only_covariate_subset(workspace, tmp_path):
    argv = ["fit", "--events", str(workspace["events"]), *grid_args(workspace), "--epidemic", "off", "--covariates", "wk"]
    assert run(argv, tmp_path) == 0
    fit = report(tmp_path, "fit_report.json")["result"]["fit"]
    assert [r["term"] for r in fit["endemic"]] == ["(Intercept)", "wk"]
    assert fit["gamma0"] == 0.0


def test_unknown_covariate_exits_2(workspace, tmp_path):
    argv = ["fit", "--events", str(workspace["events"]), *grid_args(workspace), "--epidemic", "off", "--covariates", "nope"]
    assert run(argv, tmp_path) == 2


def test_simulate_without_epidemic_is_parentless(workspace, tmp_path):
    b0 = intercept_for(quad_grid(t_max=60.0), 100)
    argv = ["simulate", *grid_args(workspace), "--covariates", "", f"--beta={b0!r}", "--gamma0", "0"]
    assert run(argv, tmp_path) == 0
    with open(tmp_path / "provenance.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(r["parent_id"] == "" and r["generation"] == "0" for r in rows)
    assert report(tmp_path, "simulate_manifest.json")["result"]["n"] == len(rows)


def test_simulate_refuses_supercritical(workspace, tmp_path, capsys):
    argv = ["simulate", *grid_args(workspace), "--covariates", "", "--beta=-9", "--gamma0", "10",
            "--delta-km", "0.5", "--tau-days", "5"]
    assert run(argv, tmp_path) == 2
    assert "supercritical" in capsys.readouterr().err


def test_epitest_report(workspace, tmp_path):
    argv = ["epitest", "--events", str(workspace["events"]), *grid_args(workspace),
            "--delta-km", "0.3", "--tau-days", "3", "--B", "19"]
    assert run(argv, tmp_path) == 0
    test = report(tmp_path, "epitest_report.json")["result"]["test"]
    assert test["statistic"] == "T_R"
    assert test["p_value"] == (1 + test["exceedances"]) / (test["B_effective"] + 1)
    assert test["observed_T_R"] == pytest.approx(test["fit"]["gamma0"] * math.pi * 0.09 * 3)


@pytest.mark.parametrize(
    "cmd, extra, name",
    [
        ("knox", ["--delta-km", "0.3", "--tau-days", "3", "--B", "50"], "knox_report.json"),
        ("mantel", ["--B", "50"], "mantel_report.json"),
        ("kfun", ["--deltas", "0.1,0.2", "--taus", "1,2", "--B", "20"], "kfun_report.json"),
        ("epitest", ["--delta-km", "0.3", "--tau-days", "3", "--B", "10"], "epitest_report.json"),
        ("fit", ["--delta-km", "0.3", "--tau-days", "3", "--temporal-residuals"], "fit_report.json"),
        ("simulate", ["--beta=-12.5,0.2,0.1", "--gamma0", "0.5", "--delta-km", "0.3", "--tau-days", "3"],
         "simulate_manifest.json"),
    ],
)
def test_reports_identical_across_threads(workspace, tmp_path, cmd, extra, name):
    if cmd in ("knox", "mantel", "kfun"):
        base = [cmd, "--window", str(workspace["window"]), "--t-max", "60"]
    else:
        base = [cmd, *grid_args(workspace)]
    base += ["--seed", "9", *extra]
    if cmd != "simulate":
        base += ["--events", str(workspace["events"])]
    outs = []
    for threads in (1, 4):
        out = tmp_path / f"t{threads}"
        assert run([*base, "--threads", str(threads)], out) == 0
        outs.append(out)
    files = sorted(p.name for p in outs[0].iterdir() if p.name != "runtime.json")
    assert name in files
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f


def test_console_script(tmp_path, workspace):
    exe = shutil.which("stinteract")
    cmd = [exe] if exe else [sys.executable, "-m", "stinteract.cli"]
    out = subprocess.run([*cmd, "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "stinteract" in out.stdout
