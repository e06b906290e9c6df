import csv

import numpy as np
import pytest

from herglotz.cli import main, parse_problem_text, read_trajectory, sci, traj_columns
from herglotz.errors import DimensionMismatch

from conftest import DATA

OSC = str(DATA / "damped_oscillator.toml")
FREE = str(DATA / "free_end.toml")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def solved(tmp_path, capsys, problem, grid=201, name="traj.csv"):
    out = tmp_path / name
    code, _, _ = run(capsys, "solve", problem, "--out", out, "--grid", grid)
    assert code == 0
    return out


def test_sci_format():
    assert sci(5.0) == "5.000000e0"
    assert sci(-0.7776437) == "-7.776437e-1"
    assert sci(0.0) == "0.000000e0"
    assert sci(1.5e-12) == "1.500000e-12"


def test_solve_summary_and_csv(tmp_path, capsys):
    out = tmp_path / "free.csv"
    code, stdout, _ = run(capsys, "solve", FREE, "--out", out)
    assert code == 0
    assert stdout.startswith("z(b)=5.000000e0 converged=true")
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["t", "x1d0", "x1d1", "z", "psi1", "psi_z"]
    assert len(rows) == 1 + 1001


def test_solve_to_stdout_keeps_summary_on_stderr(capsys):
    code, stdout, stderr = run(capsys, "solve", FREE, "--grid", 21)
    assert code == 0
    assert stdout.splitlines()[0] == "t,x1d0,x1d1,z,psi1,psi_z"
    assert len(stdout.splitlines()) == 22
    assert stderr.startswith("z(b)=5.000000e0 converged=true")


def test_csv_full_precision(tmp_path, capsys):
    out = solved(tmp_path, capsys, OSC)
    row = next(r for i, r in enumerate(csv.reader(out.open())) if i == 50)
    assert float(row[0]) == pytest.approx(0.245, abs=1e-15)
    # %.17g round-trips every double exactly
    pf = parse_problem_text(open(OSC).read())
    tf = read_trajectory(str(out), pf.problem)
    assert "%.17g" % tf.traj.values[49, 1] == row[2]


def test_solve_deterministic(tmp_path, capsys):
    a = solved(tmp_path, capsys, OSC, name="a.csv")
    b = solved(tmp_path, capsys, OSC, name="b.csv")
    assert a.read_bytes() == b.read_bytes()


def test_grid_env_and_flag_precedence(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("HERGLOTZ_GRID", "51")
    out = tmp_path / "env.csv"
    run(capsys, "solve", FREE, "--out", out)
    assert len(out.read_text().splitlines()) == 52
    run(capsys, "solve", FREE, "--out", out, "--grid", 31)
    assert len(out.read_text().splitlines()) == 32


def test_grid_env_invalid(capsys, monkeypatch):
    monkeypatch.setenv("HERGLOTZ_GRID", "many")
    code, _, err = run(capsys, "solve", FREE)
    assert code == 1 and "HERGLOTZ_GRID" in err


def test_even_grid_is_input_error(capsys):
    code, _, err = run(capsys, "solve", FREE, "--grid", 100)
    assert code == 1 and "odd" in err


def test_malformed_lagrangian_reports_position(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(
        "[problem]\norder = 1\ndim = 1\ninterval = [0.0, 1.0]\n"
        'lagrangian = "x1\'^2 / * 2"\nx_init = [[0.0]]\nz_init = 0.0\n'
    )
    code, _, err = run(capsys, "solve", bad)
    assert code == 1
    assert "ExprSyntaxError" in err
    # the offending '*' sits at line 5, column 23 of the file
    assert f"{bad}:5:23:" in err


def test_bad_x_init_shape(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(
        "[problem]\norder = 2\ndim = 1\ninterval = [0.0, 1.0]\n"
        'lagrangian = "x1\'\'^2"\nx_init = [[0.0]]\nz_init = 0.0\n'
    )
    code, _, err = run(capsys, "solve", bad)
    assert code == 1 and "DimensionMismatch" in err


def test_missing_problem_section(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[solver]\nseed = 1\n")
    code, _, err = run(capsys, "solve", bad)
    assert code == 1 and "MissingSection" in err


def test_missing_file(capsys):
    code, _, err = run(capsys, "solve", "/nonexistent/problem.toml")
    assert code == 1


def test_singular_control_is_numerical_failure(tmp_path, capsys):
    bad = tmp_path / "affine.toml"
    bad.write_text(
        "[problem]\norder = 1\ndim = 1\ninterval = [0.0, 1.0]\n"
        'lagrangian = "x1\'"\nx_init = [[0.0]]\nz_init = 0.0\n'
    )
    code, _, err = run(capsys, "solve", bad, "--grid", 21)
    assert code == 2 and "SingularControl" in err


def test_method_direct_and_oracle_alias(tmp_path, capsys):
    out = tmp_path / "direct.csv"
    code, stdout, _ = run(capsys, "solve", FREE, "--method", "direct", "--out", out)
    assert code == 0 and "method=direct" in stdout
    value = float(stdout.split()[0].split("=")[1])
    assert value == pytest.approx(5.0, abs=1e-4)
    code, stdout2, _ = run(capsys, "oracle", FREE, "--out", out)
    assert code == 0 and stdout2 == stdout


def test_verify_round_trip(tmp_path, capsys):
    for name in ("free_end", "second_order", "damped_oscillator", "non_autonomous"):
        problem = DATA / f"{name}.toml"
        out = solved(tmp_path, capsys, problem, name=f"{name}.csv")
        code, stdout, _ = run(capsys, "verify", out, "--problem", problem)
        lines = stdout.splitlines()
        assert code == 0, stdout
        assert [l.split()[0] for l in lines] == ["el_residual", "transversality", "dubois_reymond"]
        assert all(l.endswith("PASS") for l in lines)


def test_verify_linear_path_fails_transversality(tmp_path, capsys):
    t = np.linspace(0.0, 1.0, 101).tolist()
    path = tmp_path / "line.csv"
    with path.open("w") as fh:
        fh.write("t,x1d0,x1d1,z,psi1,psi_z\n")
        for ti in t:
            fh.write(f"{ti!r},{ti!r},1,{5 + ti / 2!r},0,1\n")
    code, stdout, _ = run(capsys, "verify", path, "--problem", FREE)
    assert code == 2
    lines = dict(l.split(None, 1) for l in stdout.splitlines())
    assert lines["transversality"].endswith("FAIL")
    assert lines["el_residual"].endswith("PASS")


def test_verify_tol_scale(tmp_path, capsys):
    out = solved(tmp_path, capsys, OSC)
    code, stdout, _ = run(capsys, "verify", out, "--problem", OSC, "--tol-scale", 1e-9)
    assert code == 2 and "FAIL" in stdout


def test_verify_dimension_mismatch(tmp_path, capsys):
    out = solved(tmp_path, capsys, FREE)
    other = tmp_path / "dim2.toml"
    other.write_text(
        "[problem]\norder = 1\ndim = 2\ninterval = [0.0, 1.0]\n"
        'lagrangian = "x1\'^2 + x2\'^2"\nx_init = [[0.0, 0.0]]\nz_init = 0.0\n'
    )
    code, _, err = run(capsys, "verify", out, "--problem", other)
    assert code == 1 and "ColumnMismatch" in err


def test_verify_rejects_non_increasing_time(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("t,x1d0,x1d1,z,psi1,psi_z\n0,0,0,5,0,1\n0,0,0,5,0,1\n1,0,0,5,0,1\n")
    code, _, err = run(capsys, "verify", path, "--problem", FREE)
    assert code == 1 and "increasing" in err


def test_noether_autonomous_passes(tmp_path, capsys):
    out = solved(tmp_path, capsys, OSC)
    code, stdout, _ = run(capsys, "noether", OSC, "--traj", out)
    assert code == 0, stdout
    assert "guarded=true" in stdout
    assert stdout.splitlines()[0].startswith("invariance") and stdout.splitlines()[0].endswith("PASS")
    xi = float(stdout.splitlines()[1].split("xi=")[1].split()[0])
    assert abs(xi) <= 1e-6


def test_noether_non_autonomous_not_asserted(tmp_path, capsys):
    problem = DATA / "non_autonomous.toml"
    out = solved(tmp_path, capsys, problem)
    code, stdout, _ = run(capsys, "noether", problem, "--traj", out)
    assert code == 2
    assert "charge not asserted" in stdout
    assert "noether_charge" not in stdout


def test_noether_missing_symmetry(tmp_path, capsys):
    out = solved(tmp_path, capsys, FREE)
    code, _, err = run(capsys, "noether", FREE, "--traj", out)
    assert code == 1 and "MissingSection" in err


def test_noether_without_finite_family_is_unguarded(tmp_path, capsys, caplog):
    text = (DATA / "damped_oscillator.toml").read_text().split("[finite_symmetry]")[0]
    problem = tmp_path / "osc.toml"
    problem.write_text(text)
    out = solved(tmp_path, capsys, problem)
    code, stdout, _ = run(capsys, "noether", problem, "--traj", out)
    assert code == 0 and "guarded=false" in stdout
    assert "without an invariance certificate" in caplog.text


def test_parse_problem_text_sections():
    pf = parse_problem_text((DATA / "damped_oscillator.toml").read_text())
    assert pf.problem.n == 1 and pf.solver.grid_points == 1001 and pf.solver.seed == 42
    assert pf.symmetry is not None and pf.finite_symmetry is not None


def test_parse_problem_text_symmetry_error_position():
    text = (DATA / "damped_oscillator.toml").read_text().replace('X = ["0"]', 'X = ["0 +"]')
    with pytest.raises(ValueError) as info:
        parse_problem_text(text, "osc.toml")
    line = text.splitlines().index('X = ["0 +"]') + 1
    assert f"osc.toml:{line}:" in str(info.value)


def test_parse_problem_text_symmetry_dimension():
    text = (DATA / "damped_oscillator.toml").read_text().replace('X = ["0"]', 'X = ["0", "1"]')
    with pytest.raises(DimensionMismatch):
        parse_problem_text(text)


def test_traj_columns_count():
    for n in (1, 2, 3):
        for m in (1, 2):
            cols = traj_columns(n, m)
            assert len(cols) == 1 + m * (n + 1) + 1 + n * m + 1
    assert traj_columns(1, 2) == ["t", "x1d0", "x1d1", "x2d0", "x2d1", "z", "psi1_1", "psi1_2", "psi_z"]


def test_multi_dimensional_round_trip(tmp_path, capsys):
    problem = tmp_path / "two.toml"
    problem.write_text(
        "[problem]\norder = 2\ndim = 2\ninterval = [0.0, 1.0]\n"
        'lagrangian = "x1\'\'^2/2 + x2\'\'^2/2 + x1*x2/4 - z/4"\n'
        "x_init = [[1.0, 0.0], [0.0, 1.0]]\nz_init = 0.0\n"
    )
    out = solved(tmp_path, capsys, problem)
    pf = parse_problem_text(problem.read_text())
    tf = read_trajectory(str(out), pf.problem)
    assert tf.traj.values[0, :4].tolist() == [1.0, 0.0, 0.0, 1.0]
    code, stdout, _ = run(capsys, "verify", out, "--problem", problem)
    assert code == 0, stdout
