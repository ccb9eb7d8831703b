import shutil
import subprocess
import sys

import numpy as np
import pytest

from ectfem.assembly import SparseComplexBlock
from ectfem.cli import EXIT_CONFIG, EXIT_IO, EXIT_MESH, EXIT_OK, EXIT_SOLVER, build_parser, main
from ectfem.mesh import write_mesh
from ectfem.meshgen import generate_box_mesh
from ectfem.scan import read_trace_csv

CONFIG = """# small scan used by the CLI tests
[mesh]
generator = tube
resolution = 2
enclosure_radius = 14e-3
z_min = -10e-3
z_max = 10e-3
angular_segments = 8

[defect]
z_min = -1e-3
z_max = 1e-3
inner_radius = 9.0e-3
outer_radius = 9.5e-3
angle_extent = 90

[materials]
frequency = 100e3

[scan]
positions = -2e-3, 0.0, 2e-3

[run]
partitions = 2
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text(CONFIG)
    return p


def body_rows(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


def test_help_documents_every_subcommand(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("validate-mesh", "partition", "assemble", "solve-one", "scan", "report", "dump-config"):
        assert cmd in out
    sub = build_parser()._subparsers._group_actions[0].choices
    for name, parser in sub.items():
        for action in parser._actions:
            assert action.help, f"{name}: {action.dest} has no help text"


def test_console_script_entry_point():
    exe = shutil.which("ectfem")
    cmd = [exe] if exe else [sys.executable, "-m", "ectfem.cli"]
    r = subprocess.run(cmd + ["--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "scan" in r.stdout


def test_validate_mesh(cfg_path, tmp_path, capsys):
    assert main(["validate-mesh", "-c", str(cfg_path)]) == EXIT_OK
    assert "mesh ok" in capsys.readouterr().out
    m = tmp_path / "box.msh"
    write_mesh(generate_box_mesh(1), m)
    assert main(["validate-mesh", "--mesh", str(m)]) == EXIT_OK


def test_validate_mesh_errors(tmp_path, capsys):
    bad = tmp_path / "bad.msh"
    bad.write_text("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n1\n1 0 0 0\n$EndNodes\n"
                   "$Elements\n1\n1 5 2 1 1 1 1 1 1 1 1 1 1\n$EndElements\n")
    assert main(["validate-mesh", "--mesh", str(bad)]) == EXIT_MESH
    err = capsys.readouterr().err
    assert "[mesh]" in err and "line 10" in err
    flat = tmp_path / "flat.msh"
    flat.write_text("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n4\n1 0 0 0\n2 1 0 0\n"
                    "3 0 1 0\n4 1 1 0\n$EndNodes\n$Elements\n1\n1 4 2 1 1 1 2 3 4\n$EndElements\n")
    assert main(["validate-mesh", "--mesh", str(flat)]) == EXIT_MESH
    assert main(["validate-mesh", "--mesh", str(tmp_path / "none.msh")]) == EXIT_IO


def test_partition(cfg_path, tmp_path, capsys):
    out = tmp_path / "parts.txt"
    assert main(["partition", "-c", str(cfg_path), "-p", "3", "-o", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "# parts=3" in text
    ids = np.loadtxt(out, dtype=int)
    assert set(ids.tolist()) == {0, 1, 2}
    assert out.read_text().startswith("# parts=3")


def test_assemble_dump_blocks(cfg_path, tmp_path, capsys):
    d = tmp_path / "blocks"
    assert main(["assemble", "-c", str(cfg_path), "--dump-blocks", str(d)]) == EXIT_OK
    names = sorted(p.name for p in d.iterdir())
    assert names == ["M11.txt", "M12.txt", "M21.txt", "M22.txt"]
    m12 = SparseComplexBlock.load(d / "M12.txt").to_csr()
    m21 = SparseComplexBlock.load(d / "M21.txt").to_csr()
    assert abs(m21 - m12.T).max() <= 1e-14 * abs(m12).max()
    assert "M11: shape=" in capsys.readouterr().out


def test_solve_one(cfg_path, capsys):
    assert main(["solve-one", "-c", str(cfg_path), "-z", "0.0"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "Z_FA = " in out and "dZ22 = " in out


def test_scan_compare_and_report(cfg_path, tmp_path, capsys, monkeypatch):
    r1, r2, r4 = tmp_path / "run1", tmp_path / "run2", tmp_path / "run4"
    assert main(["scan", "-c", str(cfg_path), "--workers", "1", "-o", str(r1)]) == EXIT_OK
    assert main(["scan", "-c", str(cfg_path), "--workers", "1", "-o", str(r2)]) == EXIT_OK
    monkeypatch.setenv("ECTFEM_WORKERS", "4")
    assert main(["scan", "-c", str(cfg_path), "-o", str(r4)]) == EXIT_OK
    t1, t2, t4 = (r / "trace.csv" for r in (r1, r2, r4))
    assert read_trace_csv(t4).workers == 4
    assert body_rows(t1) == body_rows(t2)
    capsys.readouterr()

    assert main(["report", "--compare", str(r1), str(r2)]) == EXIT_OK
    assert "max signal deviation: 0.000000e+00" in capsys.readouterr().out
    assert main(["report", "--compare", str(r1), str(r4)]) == EXIT_OK
    line = capsys.readouterr().out
    assert float(line.split("relative ")[1].rstrip(")\n")) <= 1e-12

    assert main(["report", "--speedup", str(r1), str(r4)]) == EXIT_OK
    assert "speedup" in capsys.readouterr().out

    figs = tmp_path / "figs"
    assert main(["report", str(r1), "--figures", str(figs)]) == EXIT_OK
    assert (figs / "trace_signals.png").stat().st_size > 0
    assert (figs / "trace_plane.png").stat().st_size > 0


def test_dump_config_roundtrip(cfg_path, tmp_path, capsys):
    assert main(["dump-config", "-c", str(cfg_path)]) == EXIT_OK
    dumped = tmp_path / "d.cfg"
    dumped.write_text(capsys.readouterr().out)
    assert main(["dump-config", "-c", str(dumped)]) == EXIT_OK
    assert capsys.readouterr().out == dumped.read_text()


def test_exit_codes(cfg_path, tmp_path, capsys, monkeypatch):
    bad = tmp_path / "bad.cfg"
    bad.write_text(CONFIG.replace("frequency = 100e3", "frequency = -5"))
    assert main(["scan", "-c", str(bad)]) == EXIT_CONFIG
    assert "materials.frequency" in capsys.readouterr().err

    assert main(["scan", "-c", str(tmp_path / "missing.cfg")]) == EXIT_IO

    monkeypatch.setenv("ECTFEM_WORKERS", "many")
    assert main(["scan", "-c", str(cfg_path)]) == EXIT_CONFIG
    monkeypatch.delenv("ECTFEM_WORKERS")

    singular = tmp_path / "s.cfg"
    singular.write_text(CONFIG.replace("frequency = 100e3", "frequency = 100e3\ndelta_gauge = 0"))
    assert main(["solve-one", "-c", str(singular)]) == EXIT_SOLVER
    assert "[factorize]" in capsys.readouterr().err

    assert main(["report"]) == EXIT_CONFIG
    assert main(["report", str(tmp_path / "nothing.csv")]) == EXIT_IO
