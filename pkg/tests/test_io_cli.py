import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from opvsim import cli
from opvsim.config import OUTPUT_ROOT_ENV, parse_config, parse_config_string
from opvsim.errors import ConfigError
from opvsim.io import read_iv_csv, write_iv_csv, write_vtk
from opvsim.mesh import build_structured_mesh
from opvsim.morphology import generate_synthetic, load_phase_field
from opvsim.physics import ModelParams
from opvsim.postprocess import IVCurve, IVPoint

SMALL_RUN = """
[mesh]
counts = 8 8
[morphology]
source = checkerboard
period = 2.5
[solver]
method = newton
tau = 1e-3
tau_growth = 2
tau_max = 1e3
steady_tol = 1e-6
[sweep]
v_top_start = 0
v_top_stop = 0.5
v_top_step = 0.25
[output]
directory = out
snapshots = 0.25
"""


def _curve(values):
    c = IVCurve()
    for v, it, ib in values:
        c.append(IVPoint(v, 0.0, it, ib))
    return c


# --- CSV / VTK --------------------------------------------------------------

def test_single_point_csv(tmp_path):
    write_iv_csv(_curve([(0.0, 1.0, -1.0)]), tmp_path / "iv.csv")
    lines = (tmp_path / "iv.csv").read_text().splitlines()
    assert len(lines) == 2
    assert lines[0] == "v_top,v_bot,i_top,i_bot,conservation,converged"


def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    vals = [(0.1 * k, rng.normal() * 10.0 ** rng.integers(-300, 300), np.pi / 3 ** k)
            for k in range(6)]
    write_iv_csv(_curve(vals), tmp_path / "iv.csv")
    rows = read_iv_csv(tmp_path / "iv.csv")
    for (v, it, ib), row in zip(vals, rows):
        assert (row["v_top"], row["i_top"], row["i_bot"]) == (v, it, ib)
        assert row["converged"] is True


def test_empty_curve_is_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_iv_csv(IVCurve(), tmp_path / "iv.csv")


@pytest.mark.parametrize("counts", [(2, 2), (3, 2, 2)])
def test_vtk_parses_in_reference_reader(tmp_path, counts):
    meshio = pytest.importorskip("meshio")
    m = build_structured_mesh((1.0,) * len(counts), counts)
    fields = {name: np.arange(m.num_vertices, dtype=float) + k
              for k, name in enumerate(("phi", "psi", "n", "p", "X"))}
    path = tmp_path / "f.vtk"
    write_vtk(fields, m, path)
    assert path.read_text().splitlines()[0] == "# vtk DataFile Version 3.0"
    data = meshio.read(path)
    assert len(data.points) == m.num_vertices
    for name, values in fields.items():
        np.testing.assert_array_equal(np.ravel(data.point_data[name]), values)


def test_vtk_rejects_bad_fields(tmp_path):
    m = build_structured_mesh((1, 1), (2, 2))
    with pytest.raises(ValueError):
        write_vtk({"psi": np.zeros(3)}, m, tmp_path / "f.vtk")
    with pytest.raises(ValueError):
        write_vtk({}, m, tmp_path / "f.vtk")


# --- configuration ----------------------------------------------------------

def test_empty_params_section_gives_defaults():
    cfg = parse_config_string("[params]\n")
    assert cfg.params == ModelParams()
    assert cfg.solver.tau == 1e-4 and cfg.solver.steady_tol == 1e-4


def test_mixed_case_parameters_are_settable():
    cfg = parse_config_string("[params]\nG = 2\nn_intr = 0.5\nmu_n = 4\n")
    assert (cfg.params.G, cfg.params.N_intr, cfg.params.mu_n) == (2.0, 0.5, 4.0)


def test_alpha_outside_range_is_reported():
    with pytest.raises(ConfigError) as exc:
        parse_config_string("[solver]\nmethod = gummel\nalpha = 1.5\n")
    assert "(0, 1)" in str(exc.value)


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as exc:
        parse_config_string("[solver]\nfo = 1\n")
    assert "'fo'" in str(exc.value)


def test_all_problems_are_collected():
    with pytest.raises(ConfigError) as exc:
        parse_config_string("[params]\nmu_n = -1\n[solver]\nfo = 1\n[bogus]\n")
    assert len(exc.value.problems) == 3


def test_syntax_error_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_config_string("[mesh]\ncounts = 4 4\nthis line is wrong\n")
    assert "line 3" in str(exc.value)


def test_snapshot_must_be_a_sweep_point():
    with pytest.raises(ConfigError) as exc:
        parse_config_string("[sweep]\nv_top_stop = 1\nv_top_step = 0.25\n"
                            "[output]\nsnapshots = 0.3\n")
    assert "snapshot" in str(exc.value)


def test_missing_morphology_file_is_reported(tmp_path):
    with pytest.raises(ConfigError):
        parse_config_string("[morphology]\nsource = file\npath = nope.phf\n", base_dir=tmp_path)


def test_output_root_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert parse_config_string("[output]\ndirectory = run1\n").output_dir == \
        tmp_path / "root" / "run1"
    absolute = tmp_path / "abs"
    assert parse_config_string(f"[output]\ndirectory = {absolute}\n").output_dir == absolute


# --- CLI --------------------------------------------------------------------

def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_simulate_writes_outputs(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    cfg = _write(tmp_path, SMALL_RUN)
    assert cli.main(["simulate", str(cfg)]) == 0
    out = tmp_path / "out"
    rows = read_iv_csv(out / "iv.csv")
    assert [r["v_top"] for r in rows] == [0.0, 0.25, 0.5]
    assert all(r["converged"] and r["conservation"] <= 1e-3 for r in rows)
    report = json.loads((out / "report.json").read_text())
    assert report["converged"] and len(report["points"]) == 3
    assert all(Path(p).exists() for p in report["outputs"])
    snaps = list(out.glob("*.vtk"))
    assert len(snaps) == 1 and "0_25" in snaps[0].name
    assert "V_top=0.5" in capsys.readouterr().out


def test_rerun_is_byte_identical(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    text = SMALL_RUN.replace("snapshots = 0.25", "formats = csv")
    a = _write(tmp_path, text.replace("directory = out", "directory = a"), "a.ini")
    b = _write(tmp_path, text.replace("directory = out", "directory = b"), "b.ini")
    assert cli.main(["simulate", str(a)]) == 0
    assert cli.main(["simulate", str(b)]) == 0
    assert (tmp_path / "a" / "iv.csv").read_bytes() == (tmp_path / "b" / "iv.csv").read_bytes()


def test_nonconverged_sweep_exits_nonzero(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    text = SMALL_RUN.replace("steady_tol = 1e-6", "steady_tol = 1e-6\nmax_time_steps = 2")
    assert cli.main(["simulate", str(_write(tmp_path, text))]) == 3


def test_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["check", str(_write(tmp_path, "[solver]\nfo = 1\n"))]) == 2
    assert "fo" in capsys.readouterr().err
    assert cli.main(["check", str(tmp_path / "missing.ini")]) == 2


def test_check_accepts_valid_file(tmp_path, capsys):
    assert cli.main(["check", str(_write(tmp_path, SMALL_RUN))]) == 0
    assert "ok" in capsys.readouterr().out


def test_generate_uniform_morphology(tmp_path):
    cfg = _write(tmp_path, "[mesh]\ncounts = 10 10\n[morphology]\nsource = uniform\nc = 0.5\n")
    out = tmp_path / "u.phf"
    assert cli.main(["morphology", str(cfg), "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    body = [ln for ln in lines if ln.strip()][-100:]
    assert len(lines) - 100 >= 1 and all(float(v) == 0.5 for v in body)
    m = build_structured_mesh((10, 10), (10, 10))
    assert np.all(load_phase_field(out, m).values == 0.5)


def test_generated_noise_is_reproducible(tmp_path):
    text = "[mesh]\ncounts = 12 12\n[morphology]\nsource = smoothed_noise\nseed = 7\n"
    cfg = _write(tmp_path, text)
    a, b = tmp_path / "a.phf", tmp_path / "b.phf"
    cli.main(["morphology", str(cfg), "-o", str(a)])
    cli.main(["morphology", str(cfg), "-o", str(b)])
    assert a.read_bytes() == b.read_bytes()
    m = build_structured_mesh((10, 10), (12, 12))
    assert np.array_equal(load_phase_field(a, m).values,
                          generate_synthetic("smoothed_noise", m, seed=7).values)


def test_morphology_from_file_is_used(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    gen = _write(tmp_path, "[mesh]\ncounts = 6 6\n[morphology]\nsource = bilayer\n", "g.ini")
    cli.main(["morphology", str(gen), "-o", str(tmp_path / "b.phf")])
    cfg = parse_config(_write(tmp_path, "[mesh]\ncounts = 6 6\n[morphology]\nsource = file\n"
                                        "path = b.phf\n", "f.ini"))
    mesh, phi = cli.build_morphology(cfg)
    assert set(np.unique(phi.values)) == {0.0, 1.0}


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "opvsim", "check",
                           str(_write(tmp_path, SMALL_RUN))], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
