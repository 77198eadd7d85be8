import csv
import json

import numpy as np
import pytest

from porehomog.cli import main
from porehomog.config import ConfigError, parse_config, parse_eps
from porehomog.io import read_snapshot, write_snapshot


def test_parse_cell_example():
    cfg = parse_config("command=cell\ngeometry=disc:0.25\nN=64")
    assert cfg.command == "cell" and cfg.N == 64 and cfg.seed == 0
    assert cfg.cell_geometry.radius == 0.25


def test_parse_sweep_example():
    cfg = parse_config("command=sweep\neps=1/2,1/4,1/8\ngeometry=disc:0.25\nN_cell=16\n")
    assert cfg.eps == (0.5, 0.25, 0.125)


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="line 1: unknown key: geom"):
        parse_config("geom=disc:0.25", command="cell")


@pytest.mark.parametrize("text, pattern", [
    ("command=cell\ngeometry=disc:0.25\nN=-3", "line 3: malformed value for N"),
    ("command=cell\ngeometry=disc:0.7", "line 2: malformed value for geometry"),
    ("command=cell\ngeometry=disc:0.2\ngeometry=disc:0.3", "line 3: duplicate key"),
    ("command=micro\ngeometry=disc:0.2\nN_cell=8", "missing required key: eps"),
    ("geometry=disc:0.2", "missing required key: command"),
    ("command=cell\njust words", "line 2: expected key=value"),
    ("command=micro\ngeometry=disc:0.2\neps=1/2,1/4\nN_cell=8", "line 3: micro takes a single eps"),
    ("command=sweep\ngeometry=disc:0.2\neps=1/2\nN_cell=8", "sweep needs ≥ 3 levels"),
    ("command=micro\ngeometry=disc:0.2\neps=0.3\nN_cell=8", "line 3: malformed value for eps"),
    ("command=micro\ngeometry=disc:0.2\neps=1/2\nN_cell=2", "line 4: N_cell must be >= 4"),
    ("command=cell\ngeometry=empty", "FluxBalance needs a solid interface"),
    ("command=micro\ngeometry=disc:0.2\neps=1/2\nN_cell=8\ndt=0.01\nsteps=5\nT=1", "line 6: steps=5"),
    ("command=micro\ngeometry=disc:0.2\neps=1/2\nN_cell=8\ndt=0.003\nT=0.01", "not an integer multiple"),
    ("command=micro\ngeometry=disc:0.2\neps=1/2\nN_cell=8\nseed=-1", "line 5: malformed value for seed"),
])
def test_config_errors(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(text)


def test_command_line_precedence():
    with pytest.raises(ConfigError, match="conflicts with subcommand"):
        parse_config("command=cell\ngeometry=disc:0.2", command="micro")
    cfg = parse_config("geometry=disc:0.2\nseed=4", command="cell", seed=11)
    assert cfg.seed == 11


def test_steps_key_sets_horizon():
    cfg = parse_config("command=micro\ngeometry=disc:0.2\neps=1/2\nN_cell=8\ndt=0.002\nsteps=5")
    assert cfg.T == pytest.approx(0.01) and cfg.steps == 5


def test_parse_eps_forms():
    assert parse_eps("1/2, 0.25,1/8") == (0.5, 0.25, 0.125)
    for bad in ("2/3", "0", "1/2,,1/4"):
        with pytest.raises(ValueError):
            parse_eps(bad)


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\ncommand=cell  # inline\ngeometry = slab:0.25:0.75\n")
    assert cfg.cell_geometry.kind == "slab"
    assert cfg.raw == {"command": "cell", "geometry": "slab:0.25:0.75"}


def test_snapshot_round_trip(tmp_path):
    a = np.random.default_rng(0).standard_normal((6, 6))
    write_snapshot(tmp_path / "f", a, {"eps": 0.5})
    b, meta = read_snapshot(tmp_path / "f.bin")
    assert np.array_equal(a, b) and meta["eps"] == 0.5 and meta["byte_order"] == "little"


# ---------------------------------------------------------------------------
# command line


def _run(tmp_path, command, text, name="out", seed=None):
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(text)
    out = tmp_path / name
    argv = [command, "--config", str(cfg), "--out", str(out)]
    if seed is not None:
        argv += ["--seed", str(seed)]
    return main(argv), out


def _artifact_bytes(out):
    return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*"))
            if p.is_file() and p.name != "timing.json"}


def test_cli_config_error_exit_code(tmp_path, capsys):
    code, _ = _run(tmp_path, "cell", "geom=disc:0.25\n")
    assert code == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "unknown key: geom" in err[0]
    assert main(["cell", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "x")]) == 2


def test_cli_cell(tmp_path):
    code, out = _run(tmp_path, "cell", "geometry=disc:0.25\nN=32\n")
    assert code == 0
    doc = json.loads((out / "coefficients.json").read_text())
    assert set(doc) >= {"theta", "sigma_bar", "D_eff", "K", "M", "convention", "N", "geometry", "residuals"}
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "cell" and man["mask_sha256"] and man["rng"]
    assert "coefficients.json" in man["artifacts"]
    assert "wall_time_s" in json.loads((out / "timing.json").read_text())


def test_cli_cell_empty_not_defined(tmp_path):
    code, out = _run(tmp_path, "cell", "geometry=empty\nN=8\nconvention=MeanProject\n")
    assert code == 0
    assert json.loads((out / "coefficients.json").read_text())["K"] == "not defined"


def test_cli_micro_zero_horizon(tmp_path):
    code, out = _run(tmp_path, "micro", "geometry=disc:0.25\neps=1/2\nN_cell=8\nT=0\n")
    assert code == 0
    rows = list(csv.reader((out / "ledger.csv").open()))
    assert rows[0][:6] == ["step", "t", "E", "D_u", "D_w", "mass"] and len(rows) == 2
    assert sorted(p.name for p in (out / "snapshots").glob("c_*.bin")) == ["c_step000000.bin"]


def test_cli_micro_then_unfold(tmp_path):
    code, out = _run(tmp_path, "micro", "geometry=disc:0.25\neps=1/2\nN_cell=8\ninit=smooth\nT=0.002\n")
    assert code == 0
    snap = out / "snapshots" / "c_step000002.bin"
    code, uout = _run(tmp_path, "unfold", f"snapshot={snap}\nextension=cell_average\n", name="unf")
    assert code == 0
    rows = list(csv.DictReader((uout / "unfold.csv").open()))
    assert len(rows) == 1 and float(rows[0]["integral_diff"]) <= 1e-12
    code, _ = _run(tmp_path, "unfold", f"snapshot={snap}\neps=1/4\n", name="unf2")
    assert code == 2


def test_cli_macro_from_coefficients_file(tmp_path):
    code, cout = _run(tmp_path, "cell", "geometry=disc:0.25\nN=16\n", name="cell")
    assert code == 0
    text = f"coefficients={cout / 'coefficients.json'}\nN=8\nT=0.003\nsigma_bar_override=1\n"
    code, out = _run(tmp_path, "macro", text)
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["sigma_bar_used"] == 1.0 and man["sigma_bar_override_used"]
    assert len(list(csv.reader((out / "ledger.csv").open()))) == 5


def test_cli_macro_degenerate_is_solver_failure(tmp_path, capsys):
    code, _ = _run(tmp_path, "macro", "geometry=disc:0.25\nN_cell=8\nN=8\nT=0.002\norientation=AsWritten\n")
    assert code == 3
    assert "degenerate" in capsys.readouterr().err


def test_cli_sweep_manufactured(tmp_path):
    code, out = _run(tmp_path, "sweep", "eps=1/2,1/4,1/8\nN_cell=8\nmanufactured=true\n")
    assert code == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert [float(r["eps"]) for r in rows] == [0.5, 0.25, 0.125]
    assert json.loads((out / "verdict.json").read_text())["monotone"] is True


def test_cli_sweep_verdict_failure_exit_code(tmp_path, capsys):
    # a constant state is stationary, but w = f(0.5) is not captured by the
    # corrector ansatz, so the w distance stalls at a positive plateau
    code, out = _run(tmp_path, "sweep", "geometry=disc:0.25\neps=1/2,1/4,1/8\nN_cell=4\ninit=constant:0.5\nT=0.002\n")
    assert code == 4
    assert "monotone w" in capsys.readouterr().err
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert all(float(r["dist_c"]) == 0.0 for r in rows)
    assert len({r["dist_w"] for r in rows}) == 1 and float(rows[0]["dist_w"]) > 0.0
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["monotone_c"] and not verdict["monotone_w"] and not verdict["passed"]
    assert (out / "manifest.json").exists()


def test_cli_reruns_bitwise_identical(tmp_path):
    text = "geometry=disc:0.25\neps=1/2\nN_cell=8\nT=0.003\n"
    code_a, a = _run(tmp_path, "micro", text, name="a", seed=5)
    code_b, b = _run(tmp_path, "micro", text, name="b", seed=5)
    assert code_a == code_b == 0
    assert _artifact_bytes(a) == _artifact_bytes(b)
    code_c, c = _run(tmp_path, "micro", text, name="c", seed=6)
    assert _artifact_bytes(a) != _artifact_bytes(c)
