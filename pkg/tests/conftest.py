import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ectfem.assembly import CoilGeometry, MaterialTable  # noqa: E402
from ectfem.mesh import Region  # noqa: E402
from ectfem.meshgen import DefectSpec, TSPSpec, TubeGeometry, generate_box_mesh, generate_tube_mesh  # noqa: E402

ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def record():
    """Store an acceptance verdict; the summary prints one line per criterion."""

    def _record(name: str, ok: bool, detail: str = ""):
        ACCEPTANCE.append((name, bool(ok), detail))
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")


def pytest_collection_modifyitems(config, items):
    # acceptance criteria run last so their summary follows the unit results
    items.sort(key=lambda it: "test_acceptance" in it.nodeid)


@pytest.fixture(scope="session")
def cube6():
    return generate_box_mesh(1, region=Region.TUBE)


@pytest.fixture(scope="session")
def small_geometry():
    return TubeGeometry(resolution=2, enclosure_radius=14e-3, z_min=-10e-3, z_max=10e-3,
                        probe_positions=[-2e-3, 0.0, 2e-3], angular_segments=8,
                        defect=DefectSpec(-1e-3, 1e-3, 9.0e-3, 9.5e-3, 0.0, 90.0))


@pytest.fixture(scope="session")
def small_tube(small_geometry):
    return generate_tube_mesh(small_geometry)


@pytest.fixture(scope="session")
def tsp_tube():
    g = TubeGeometry(resolution=2, enclosure_radius=14e-3, z_min=-10e-3, z_max=10e-3,
                     angular_segments=8, tsp=TSPSpec(-2e-3, 2e-3, 9.5e-3, 12e-3))
    return generate_tube_mesh(g)


@pytest.fixture(scope="session")
def materials():
    return MaterialTable.standard(100e3)


@pytest.fixture(scope="session")
def coil(small_geometry):
    g = small_geometry
    return CoilGeometry(g.coil_inner_radius, g.coil_outer_radius, g.coil_height, g.coil_separation)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
