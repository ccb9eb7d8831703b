from dataclasses import replace

import numpy as np
import pytest

from ectfem.assembly import MU0, CoilGeometry, MaterialTable
from ectfem.mesh import Region
from ectfem.meshgen import DefectSpec, TubeGeometry, generate_tube_mesh
from ectfem.scan import (CSV_COLUMNS, TIMING_PREFIX, ImpedanceTrace, ScanConfig, StageError,
                         format_speedup, read_trace_csv, run_scan, speedup_report, write_trace_csv)
from ectfem.signals import SignalPoint

POSITIONS = [-3.5e-3 + 1e-3 * k for k in range(8)]


@pytest.fixture(scope="module")
def scan_geometry():
    return TubeGeometry(resolution=2, enclosure_radius=14e-3, z_min=-10e-3, z_max=10e-3,
                        probe_positions=POSITIONS, angular_segments=8,
                        defect=DefectSpec(-1e-3, 1e-3, 9.0e-3, 9.5e-3, 0.0, 90.0))


@pytest.fixture(scope="module")
def scan_mesh(scan_geometry):
    return generate_tube_mesh(scan_geometry)


@pytest.fixture(scope="module")
def base_cfg(scan_mesh, scan_geometry):
    g = scan_geometry
    return ScanConfig(mesh=scan_mesh, materials=MaterialTable.standard(100e3), positions=POSITIONS,
                      coil=CoilGeometry(g.coil_inner_radius, g.coil_outer_radius, g.coil_height,
                                        g.coil_separation), config_hash="abc")


@pytest.fixture(scope="module")
def serial_trace(base_cfg):
    return run_scan(base_cfg)


def _rel(a, b):
    return float(np.abs(a - b).max() / np.abs(b).max())


def test_trace_shape_and_timings(serial_trace):
    t = serial_trace
    assert len(t.points) == len(POSITIONS)
    assert np.all(np.diff(t.z) > 0)
    assert not t.failed
    assert set(t.timings) == {"partition", "assemble", "reduce", "factorize", "solve", "total"}
    assert all(v >= 0 for v in t.timings.values())
    assert np.abs(t.signals()).max() > 0


def test_one_factorization_per_configuration(serial_trace):
    assert serial_trace.factorizations == 2


def test_single_configuration_when_reference_matches(base_cfg):
    mat = base_cfg.materials.with_region(Region.DEFECT, base_cfg.materials.sigma_eps, MU0)
    t = run_scan(replace(base_cfg, materials=mat, positions=POSITIONS[:2]))
    assert t.factorizations == 1
    assert np.all(t.signals() == 0)


def test_no_defect_gives_zero(scan_geometry, base_cfg):
    mesh = generate_tube_mesh(replace(scan_geometry, defect=None, probe_positions=[0.0]))
    assert not np.any(mesh.tet_region == Region.DEFECT)
    t = run_scan(replace(base_cfg, mesh=mesh, positions=[0.0]))
    assert len(t.points) == 1
    assert t.points[0].z_fa == 0 and t.points[0].z_f3 == 0


def test_signal_modes_in_trace(serial_trace):
    for p in serial_trace.points:
        assert p.z_fa == 0.5j * (p.delta_z[0, 0] + p.delta_z[0, 1])
        assert p.z_f3 == 0.5j * (p.delta_z[0, 0] - p.delta_z[1, 1])


@pytest.mark.parametrize("workers", [2, 4])
def test_worker_count_invariance(base_cfg, serial_trace, workers):
    t = run_scan(replace(base_cfg, workers=workers))
    assert t.factorizations == 2
    assert np.array_equal(t.z, serial_trace.z)
    assert _rel(t.signals(), serial_trace.signals()) <= 1e-12


def test_current_scales_signal(base_cfg, serial_trace):
    t = run_scan(replace(base_cfg, current=2.0, positions=POSITIONS[:2]))
    assert _rel(t.signals(), 4 * serial_trace.signals()[:2]) <= 1e-10


def test_failed_position_does_not_abort(base_cfg):
    cfg = replace(base_cfg, solver="iterative", max_iter=1, tol=1e-14, positions=POSITIONS[:2])
    t = run_scan(cfg)
    assert len(t.points) == 2 and t.failed == POSITIONS[:2]
    assert np.isnan(t.signals()).all()


def test_iterative_scan_matches_direct(base_cfg, serial_trace):
    t = run_scan(replace(base_cfg, solver="iterative", tol=1e-10, positions=POSITIONS[3:5]))
    assert not t.failed
    assert _rel(t.signals(), serial_trace.signals()[3:5]) <= 1e-6


@pytest.mark.parametrize("change, stage", [
    (dict(positions=[1e-3, 0.0]), "config"),
    (dict(positions=[]), "config"),
    (dict(positions=[0.3e-3]), "config"),       # coil not resolved by the mesh layers
    (dict(solver="cg"), "config"),
    (dict(n_parts=0), "config"),
])
def test_stage_errors(base_cfg, change, stage):
    with pytest.raises(StageError) as e:
        run_scan(replace(base_cfg, **change))
    assert e.value.stage == stage and str(e.value).startswith(f"[{stage}]")


def test_coil_overlapping_conductor_rejected(base_cfg):
    coil = replace(base_cfg.coil, outer_radius=9.0e-3)
    with pytest.raises(StageError, match="config"):
        run_scan(replace(base_cfg, coil=coil))


def test_factorize_stage_error(base_cfg):
    mat = replace(base_cfg.materials, delta_gauge=0.0)
    with pytest.raises(StageError) as e:
        run_scan(replace(base_cfg, materials=mat, positions=[POSITIONS[3]]))
    assert e.value.stage == "factorize"


# --- CSV output

def test_csv_sorted_and_roundtrip(tmp_path, serial_trace):
    shuffled = ImpedanceTrace(list(reversed(serial_trace.points)), serial_trace.timings, 2,
                              serial_trace.position_times, 1, "abc")
    p = tmp_path / "t.csv"
    write_trace_csv(shuffled, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "# config_hash abc"
    body = [ln for ln in lines if not ln.startswith("#")]
    assert body[0] == ",".join(CSV_COLUMNS)
    zs = [float(r.split(",")[0]) for r in body[1:]]
    assert zs == sorted(zs)
    back = read_trace_csv(p)
    assert back.config_hash == "abc" and back.factorizations == 2
    assert np.allclose(back.z, serial_trace.z, rtol=1e-12, atol=0)
    s0 = serial_trace.signals()
    assert np.all(np.abs(back.signals() - s0) <= 1e-11 * np.abs(s0) + 1e-300)
    assert back.timings["total"] == pytest.approx(serial_trace.timings["total"], abs=1e-6)


def test_csv_out_of_order_points(tmp_path):
    pts = [SignalPoint.from_delta(z, np.full((2, 2), z)) for z in (3.0, 1.0, 2.0)]
    p = tmp_path / "o.csv"
    write_trace_csv(ImpedanceTrace(pts), p)
    body = [ln for ln in p.read_text().splitlines() if not ln.startswith("#")]
    assert [float(r.split(",")[0]) for r in body[1:]] == [1.0, 2.0, 3.0]


def test_csv_empty_trace(tmp_path):
    p = tmp_path / "e.csv"
    write_trace_csv(ImpedanceTrace([]), p)
    body = [ln for ln in p.read_text().splitlines() if not ln.startswith("#")]
    assert body == [",".join(CSV_COLUMNS)]
    assert read_trace_csv(p).points == []


def test_csv_failed_rows(tmp_path):
    p = tmp_path / "f.csv"
    write_trace_csv(ImpedanceTrace([SignalPoint.failure(0.0)]), p)
    assert read_trace_csv(p).failed == [0.0]


def test_csv_io_errors(tmp_path):
    with pytest.raises(StageError, match="output"):
        write_trace_csv(ImpedanceTrace([]), tmp_path / "missing" / "x.csv")
    with pytest.raises(StageError, match="output"):
        read_trace_csv(tmp_path / "nope.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(StageError):
        read_trace_csv(bad)


def test_output_written_by_scan(tmp_path, base_cfg):
    p = tmp_path / "scan.csv"
    run_scan(replace(base_cfg, positions=[POSITIONS[3]], output=str(p)))
    text = p.read_text()
    assert TIMING_PREFIX + "workers=1 factorizations=2" in text


# --- speedup report

def _trace(workers, total, assemble=1.0, solve=1.0, h="x"):
    return ImpedanceTrace([], dict(total=total, assemble=assemble, solve=solve), workers=workers,
                          config_hash=h)


def test_speedup_serial_is_one():
    rows = speedup_report([_trace(1, 10.0)])
    assert rows[0].speedup == 1.0 and rows[0].ratio == 1.0


def test_speedup_values():
    rows = speedup_report([_trace(4, 4.0, 0.5, 0.25), _trace(1, 10.0)])
    assert [r.workers for r in rows] == [1, 4]
    assert rows[1].speedup == 2.5 and rows[1].ratio == 0.4
    assert rows[1].assemble_speedup == 2.0 and rows[1].position_speedup == 4.0
    assert "speedup" in format_speedup(rows)


def test_speedup_errors():
    with pytest.raises(ValueError):
        speedup_report([])
    with pytest.raises(ValueError, match="different"):
        speedup_report([_trace(1, 1.0, h="a"), _trace(2, 1.0, h="b")])
    with pytest.raises(ValueError, match="single-worker"):
        speedup_report([_trace(2, 1.0)])
