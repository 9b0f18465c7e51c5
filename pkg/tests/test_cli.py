import filecmp
from pathlib import Path

import numpy as np
import pytest

from qddopt.cli import build_parser, main
from qddopt.discrete import read_field_csv
from qddopt.report import emit_results
from qddopt.state import solve_state

from conftest import flat_device

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FAST = str(CONFIGS / "mesfet_fast.cfg")


def _same_tree(a: Path, b: Path):
    fa = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    fb = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert fa == fb
    for rel in fa:
        if rel.name == "summary.txt":
            continue  # echoes the output directory
        assert filecmp.cmp(a / rel, b / rel, shallow=False), rel


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--help"])
    out = capsys.readouterr().out
    assert "physics.lam2 = 0.0017" in out and "exit codes" in out


def test_solve_command(tmp_path):
    assert main(["solve", "--config", FAST, "--grid", "16", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "summary.txt").read_text().splitlines()
    keys = {l.split(":")[0] for l in lines}
    assert {"peak_current_density", "current_drain", "residual"} <= keys
    for name in ("C", "rho", "n", "V", "S"):
        assert (tmp_path / "fields" / f"{name}.csv").exists()


def test_optimize_command_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["optimize", "--config", FAST, "--grid", "16", "--out", str(d)]) == 0
    header = (a / "trace.csv").read_text().splitlines()[0]
    assert header == "k,J,grad_norm,alpha,current"
    summary = (a / "summary.txt").read_text()
    for key in ("J_opt:", "iterations:", "peak_current_density_opt:", "current_drain:", "config.cost.gamma"):
        assert key in summary
    _same_tree(a, b)


def test_sweep_command(tmp_path):
    rc = main(["sweep", "--config", FAST, "--grid", "14", "--out", str(tmp_path)])
    assert rc == 0
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(rows) - 1 == 5 + 2
    assert rows[1].startswith("dd,")


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--config", FAST, "--out", str(tmp_path)]) == 0
    assert "best[0]" in capsys.readouterr().out
    assert (tmp_path / "gradcheck.csv").exists()


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[cost]\ngamma = -1\n")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "cost.gamma must be > 0" in capsys.readouterr().err


def test_solver_failure_exit_code(tmp_path):
    bad = tmp_path / "cap.cfg"
    bad.write_text("[solver]\nmax_gummel = 1\nmax_newton = 1\nnewton_switch = 1e-14\n")
    assert main(["solve", "--config", str(bad), "--grid", "12", "--out", str(tmp_path / "o")]) == 3


def test_line_search_exit_code(tmp_path, monkeypatch):
    import qddopt.optimize as opt

    monkeypatch.setattr(opt, "_try_state", lambda *a: None)
    assert main(["optimize", "--config", FAST, "--grid", "12", "--out", str(tmp_path)]) == 4


def test_timing_column_optional(tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text(Path(FAST).read_text().replace("timing = false", "timing = true"))
    assert main(["optimize", "--config", str(cfg), "--grid", "12", "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "trace.csv").read_text().splitlines()[0].endswith(",seconds")


def test_equilibrium_fields_constant(tmp_path):
    dev = flat_device(10)
    st_ = solve_state(dev, dev.C_ref, 1e-3)
    emit_results(st_, tmp_path, device=dev)
    for name, value in (("rho", 1.0), ("V", 0.0), ("S", 0.0), ("C", 1.0)):
        _, _, v = read_field_csv(tmp_path / "fields" / f"{name}.csv")
        np.testing.assert_allclose(v, value, rtol=0, atol=1e-12)


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["solve", "--config", FAST, "--grid", "10", "--out", str(blocker / "sub")]) == 5
