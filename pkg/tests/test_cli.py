import json

import pytest

from finsler.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_MESH, EXIT_OK, EXIT_SOLVER, build_parser, main
from finsler.output import read_csv


def config(tmp_path, text, name="c.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_parser_lists_the_subcommands():
    ap = build_parser()
    for cmd in ("solve", "sweep", "verify-norms", "exact", "report"):
        assert ap.parse_args([cmd]).command == cmd
    with pytest.raises(SystemExit):
        ap.parse_args(["plot"])


def test_solve_writes_summary_checks_and_vtk(tmp_path, capsys):
    cfg = config(tmp_path, "delta = 0.1\n[mesh]\nh_far = 0.3\n")
    out = tmp_path / "out"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == EXIT_OK
    s = json.loads((out / "summary.json").read_text())
    assert s["U1"] < 0 < s["U2"]
    assert {"flux_R1", "flux_R2", "I_delta_w", "h_far", "h_neck", "delta"} <= set(s)
    assert json.loads((out / "checks.json").read_text())["passed"]
    assert (out / "solution.vtk").read_text().startswith("# vtk")
    assert "U1=" in capsys.readouterr().out


def test_solve_constant_datum(tmp_path):
    cfg = config(tmp_path, "delta = 0.1\np = 1.5\n[phi]\nkind = \"constant\"\nvalue = 1.0\n")
    out = tmp_path / "out"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == EXIT_OK
    s = json.loads((out / "summary.json").read_text())
    assert s["U1"] == pytest.approx(1.0, abs=1e-12) and s["U2"] == pytest.approx(1.0, abs=1e-12)
    assert abs(s["flux_R1"]) < 1e-10 and abs(s["flux_R2"]) < 1e-10


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["solve", "--config", config(tmp_path, "p = 0.5\n")]) == EXIT_CONFIG
    assert "p in (1, N]" in capsys.readouterr().err
    assert main(["solve", "--config", config(tmp_path, "deltas = [0.1, 0.05]\n")]) == EXIT_CONFIG
    assert main(["solve"]) == EXIT_CONFIG


def test_mesh_error_exit_code(tmp_path):
    cfg = config(tmp_path, "delta = 0.1\n[mesh]\nh_far = 0.01\nh_neck = 0.02\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_MESH


def test_solver_error_exit_code(tmp_path):
    cfg = config(tmp_path, "delta = 0.05\np = 1.3\n[solver]\nmax_newton = 1\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_SOLVER


def test_single_delta_sweep_refuses_fit_but_writes_rows(tmp_path, capsys):
    cfg = config(tmp_path, "deltas = [0.1]\n[mesh]\nh_far = 0.3\nmesh_check = false\n")
    out = tmp_path / "out"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert "fit refused" in capsys.readouterr().out
    rows = read_csv(out / "sweep.csv")
    assert len(rows) == 1 and rows[0]["wall_s"] == ""
    assert "refused" in json.loads((out / "fit.json").read_text())["fit"]
    assert main(["report", "--out", str(out)]) == EXIT_OK
    assert (out / "rates.csv").exists()


def test_report_without_sweep_is_a_config_error(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_verify_norms_builtin_family(tmp_path, capsys):
    assert main(["verify-norms", "--out", str(tmp_path), "--seed", "3"]) == EXIT_OK
    rep = json.loads((tmp_path / "norms.json").read_text())
    assert rep["passed"] and len(rep["checks"]) > 7
    assert "FAIL" not in capsys.readouterr().out


def test_verify_norms_from_config(tmp_path):
    cfg = config(tmp_path, 'norm = "quadratic"\nA = [[2.0, 0.3], [0.3, 1.0]]\n[verify_norms]\nn_points = 500\n')
    assert main(["verify-norms", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    bad = config(tmp_path, 'norm = "lq"\nq = 1.0\n', "bad.toml")
    assert main(["verify-norms", "--config", bad, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_exact_benchmark_and_check_exit(tmp_path):
    cfg = config(tmp_path, "[exact]\np = 2.0\nlevels = 2\nn_r = 4\nn_theta = 32\n")
    out = tmp_path / "ok"
    assert main(["exact", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "exact.json").read_text())["order_ok"]
    # a single level has no observed order, so the benchmark check fails
    one = config(tmp_path, "[exact]\nlevels = 1\nn_r = 4\nn_theta = 32\n", "one.toml")
    assert main(["exact", "--config", one, "--out", str(tmp_path / "one")]) == EXIT_CHECK


def test_sweep_outputs_are_reproducible(tmp_path):
    cfg = config(tmp_path, "deltas = [0.1, 0.05]\n[mesh]\nh_far = 0.3\nmesh_check = false\n")
    blobs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        main(["sweep", "--config", cfg, "--out", str(out), "--jobs", "1"])
        blobs.append([(out / f).read_bytes() for f in ("sweep.csv", "fit.json", "checks.json")])
    assert blobs[0] == blobs[1]
