import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mfgasym.cli import ExperimentConfig, main, sweep_points
from mfgasym.profiles import compute_R_a
from mfgasym.solver import ConfigurationError

SMALL = """\
theta = 2
mass = 1
t0 = 1
horizon = 9
initial = self_similar
nx = 256
diagnostics.rate_window = 1, 10
diagnostics.lyapunov_window = 1, 10
diagnostics.metrics_samples = 5
diagnostics.lyapunov_samples = 20
diagnostics.eta_points = 401
"""


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_profile_command(tmp_path):
    assert main(["profile", "--theta", "2", "--mass", "1", "--out", str(tmp_path)]) == 0
    info = json.loads((tmp_path / "profile.json").read_text())
    assert info["R_a"] == pytest.approx(0.2250791, abs=1e-7)
    assert info["alpha"] == 0.5
    rows = _rows(tmp_path / "profile.csv")
    assert len(rows) % 2 == 1
    centre = [r for r in rows if float(r["eta"]) == 0.0]
    assert len(centre) == 1
    assert float(centre[0]["M_a"]) == pytest.approx(0.2250791 ** 0.5, abs=1e-7)
    assert float(centre[0]["U_a"]) == 0.0


def test_profile_fraction_theta(tmp_path):
    assert main(["profile", "--theta", "2/3", "--mass", "1", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "profile.json").read_text())["alpha"] == pytest.approx(0.75)


def test_profile_missing_mass_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["profile", "--theta", "2", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_profile_bad_theta_exits_2(tmp_path):
    assert main(["profile", "--theta", "-1", "--mass", "1", "--out", str(tmp_path)]) == 2


def test_tiny_solve(tmp_path):
    cfg = _write(tmp_path, "theta = 2\nhorizon = 1\nnx = 64\n")
    out = tmp_path / "o"
    assert main(["solve", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "solve_report.json").read_text())
    assert rep["converged"] and rep["mass_drift"] < 1e-12
    for name in ("density.csv", "value.csv", "free_boundary.csv", "config.ini", "summary.json"):
        assert (out / name).exists(), name
    dens = _rows(out / "density.csv")
    assert set(dens[0]) == {"t", "x", "density"}


def test_solve_npz_output(tmp_path):
    cfg = _write(tmp_path, "theta = 1\nhorizon = 1\nnx = 64\noutput.format = npz\n")
    out = tmp_path / "o"
    assert main(["solve", cfg, "--out", str(out)]) == 0
    with np.load(out / "fields.npz") as z:
        assert z["m"].shape[1] == 64


def test_solve_not_converged_exits_3(tmp_path):
    cfg = _write(tmp_path, "theta = 2\nhorizon = 1\nnx = 64\nmax_iter = 1\n")
    assert main(["solve", cfg, "--out", str(tmp_path / "o")]) == 3
    assert (tmp_path / "o" / "solve_report.json").exists()


def test_planning_mass_mismatch_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path, "theta = 2\nhorizon = 1\nnx = 64\nvariant = planning\n"
                           "terminal.kind = bump\nterminal.mass = 2\n")
    assert main(["solve", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "compatibility" in capsys.readouterr().err


@pytest.mark.parametrize("text,key", [("theta = 0\n", "theta"), ("nx = 3\n", "nx"),
                                      ("cfl = 2\n", "cfl"), ("bogus = 1\n", "bogus"),
                                      ("variant = other\n", "variant")])
def test_invalid_config_exits_2(tmp_path, capsys, text, key):
    cfg = _write(tmp_path, text)
    assert main(["solve", cfg, "--out", str(tmp_path / "o")]) == 2
    assert key in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert main(["solve", str(tmp_path / "nope.ini")]) == 2


def test_solve_is_deterministic(tmp_path):
    cfg = _write(tmp_path, "theta = 2\nhorizon = 2\nnx = 128\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["solve", cfg, "--out", str(a)]) == 0
    assert main(["solve", cfg, "--out", str(b)]) == 0
    for name in ("density.csv", "value.csv", "free_boundary.csv", "solve_report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_config_round_trip():
    cfg = ExperimentConfig.from_text(SMALL + "kappa_T = 2/3\ndiagnostics.metrics_p = 1, 2, inf\n")
    again = ExperimentConfig.from_text(cfg.to_text())
    assert again == cfg
    assert cfg.kappa_T == pytest.approx(2.0 / 3.0)
    assert cfg.diagnostics_metrics_p == (1.0, 2.0, float("inf"))


def test_config_defaults_kappa():
    # 1 / (1 - alpha) with alpha = 1/2
    assert ExperimentConfig.from_text("theta = 2\n").kappa_T == pytest.approx(2.0)


def test_asymptotics_outputs(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "o"
    assert main(["asymptotics", cfg, "--out", str(out)]) == 0
    for name in ("lyapunov.csv", "metrics_p1.csv", "metrics_pinf.csv", "rates.json"):
        assert (out / name).exists(), name
    rates = json.loads((out / "rates.json").read_text())
    sup = [r for r in rates["rates"] if r.get("quantity") == "sup m"][0]
    assert abs(sup["exponent_fit"] + 0.5) < 0.02
    lyap = _rows(out / "lyapunov.csv")
    assert {"tau", "E", "dE_numeric", "dE_formula"} <= set(lyap[0])


def test_asymptotics_off_centre_exits_4(tmp_path):
    cfg = _write(tmp_path, "theta = 2\nhorizon = 20\nnx = 128\nbump.a0 = -0.5\nbump.b0 = 1.5\n")
    assert main(["asymptotics", cfg, "--out", str(tmp_path / "o")]) == 4


def test_sweep_points_product():
    pts = sweep_points("theta = 2\nsweep.theta = 1, 2\nsweep.mass = 1, 2, 3\n")
    assert len(pts) == 6
    assert {"theta": "1", "mass": "3"} in pts


def test_sweep_empty_range():
    with pytest.raises(ConfigurationError, match="empty"):
        sweep_points("sweep.theta = ,\n")


def test_sweep_empty_range_exits_2(tmp_path):
    cfg = _write(tmp_path, SMALL + "sweep.theta = ,\n")
    assert main(["sweep", cfg, "--out", str(tmp_path / "s")]) == 2


SWEEP = """\
horizon = 9
t0 = 1
initial = self_similar
nx = 128
diagnostics.rate_window = 1, 10
diagnostics.lyapunov_window = 1, 10
diagnostics.metrics = false
diagnostics.lyapunov_samples = 12
diagnostics.eta_points = 201
"""


def test_sweep_theta_alpha_column(tmp_path, monkeypatch):
    monkeypatch.setenv("MFGASYM_WORKERS", "1")
    cfg = _write(tmp_path, SWEEP + "sweep.theta = 2/3, 1, 3, 4\n")
    assert main(["sweep", cfg, "--out", str(tmp_path / "s")]) == 0
    rows = _rows(tmp_path / "s" / "aggregate.csv")
    assert len(rows) == 4
    for r in rows:
        th = float(r["theta"])
        assert float(r["alpha"]) == pytest.approx(2.0 / (2.0 + th), rel=1e-15)
        assert r["status"] == "ok"


def test_sweep_mass_doubles_R_for_theta2(tmp_path, monkeypatch):
    monkeypatch.setenv("MFGASYM_WORKERS", "1")
    cfg = _write(tmp_path, SWEEP + "theta = 2\nsweep.mass = 1, 2\n")
    assert main(["sweep", cfg, "--out", str(tmp_path / "s")]) == 0
    rows = _rows(tmp_path / "s" / "aggregate.csv")
    r1, r2 = (float(r["R_a"]) for r in rows)
    assert r2 / r1 == pytest.approx(2.0, rel=1e-9)
    assert r1 == pytest.approx(compute_R_a(1.0, 2.0))


def test_workers_env_validation(tmp_path, monkeypatch):
    monkeypatch.setenv("MFGASYM_WORKERS", "zero")
    cfg = _write(tmp_path, SWEEP + "sweep.theta = 2\n")
    assert main(["sweep", cfg, "--out", str(tmp_path / "s")]) == 2


def test_check_command(capsys):
    assert main(["check", "--nx", "256"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") >= 5 and "FAIL" not in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mfgasym", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "mfgasym" in res.stdout
