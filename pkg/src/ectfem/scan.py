"""Probe scan driver: factor once per material configuration, solve per position."""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import (MU0, CoilGeometry, MaterialTable, apply_essential_bc, assemble_rhs,
                       assemble_system, coil_support, tet_node_rz)
from .mesh import CONDUCTOR_REGIONS, Mesh, Region
from .partition import partition_tets
from .signals import PotentialSolution, SignalPoint, delta_impedance
from .solver import (Factorization, SolverError, build_global, factorize,
                     fill_reducing_permutation, solve, solve_iterative)

log = logging.getLogger(__name__)

CSV_COLUMNS = ["z_m", "re_Z11", "im_Z11", "re_Z12", "im_Z12", "re_Z21", "im_Z21",
               "re_Z22", "im_Z22", "re_ZFA", "im_ZFA", "re_ZF3", "im_ZF3"]
TIMING_PREFIX = "# timing "


class StageError(RuntimeError):
    """A scan stage failed; ``stage`` names it for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class ScanConfig:
    mesh: Mesh
    materials: MaterialTable            # with-defect configuration
    positions: list[float]
    coil: CoilGeometry
    mu_eps: float = MU0                 # defect permeability of the reference configuration
    solver: str = "direct"              # or "iterative"
    tol: float = 1e-8                   # iterative path only
    max_iter: int = 500
    workers: int = 1
    n_parts: int = 4                    # partition count, independent of the worker count
    seed: int = 0
    current: float = 1.0                # total coil current (A), spread uniformly
    conjugate: bool = False
    config_hash: str = ""
    output: str | None = None

    def current_density(self) -> float:
        return self.current / (self.coil.height * (self.coil.outer_radius - self.coil.inner_radius))

    def reference_materials(self) -> MaterialTable:
        """Defect region replaced by the low-conductivity reference material."""
        m = self.materials
        return m.with_region(Region.DEFECT, m.sigma_eps, self.mu_eps)

    def check(self) -> None:
        z = np.asarray(self.positions, dtype=float)
        if len(z) == 0:
            raise StageError("config", "no probe positions")
        if np.any(np.diff(z) <= 0):
            raise StageError("config", "probe positions must be strictly increasing")
        if self.solver not in ("direct", "iterative"):
            raise StageError("config", f"unknown solver {self.solver!r}")
        if self.workers < 1 or self.n_parts < 1:
            raise StageError("config", "workers and n_parts must be >= 1")
        conductor = np.isin(self.mesh.tet_region, [int(r) for r in CONDUCTOR_REGIONS])
        rz = tet_node_rz(self.mesh)
        for zp in z:
            for coil in (1, 2):
                sup = coil_support(self.mesh, coil, float(zp), self.coil, rz)
                if len(sup) == 0:
                    raise StageError("config", f"coil {coil} at z={zp:g} covers no mesh tets")
                zs = rz[1][sup]
                zc, h = self.coil.center(coil, float(zp)), self.coil.height
                if zs.max() - zs.min() < h * (1 - 1e-9):
                    raise StageError("config", f"coil {coil} at z={zp:g} is not resolved by the "
                                     f"mesh layers (support spans {zs.max() - zs.min():.3g} m "
                                     f"of {h:.3g} m)")
                if conductor[sup].any():
                    raise StageError("config", f"coil {coil} at z={zp:g} overlaps a conductor")


@dataclass
class ImpedanceTrace:
    points: list[SignalPoint]
    timings: dict = field(default_factory=dict)     # assemble, reduce, factorize, solve, total
    factorizations: int = 0
    position_times: list[float] = field(default_factory=list)
    workers: int = 1
    config_hash: str = ""

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.z)

    @property
    def z(self) -> np.ndarray:
        return np.array([p.z for p in self.points])

    def signals(self) -> np.ndarray:
        """(n, 6) complex rows: Z11, Z12, Z21, Z22, Z_FA, Z_F3."""
        return np.array([[*p.delta_z.ravel(), p.z_fa, p.z_f3] for p in self.points],
                        dtype=complex).reshape(-1, 6)

    @property
    def failed(self) -> list[float]:
        return [p.z for p in self.points if p.failed]


class _Config:
    """One material configuration: its system and (direct path) factorization."""

    def __init__(self, matrix, factor: Factorization | None, system, omega: float):
        self.matrix = matrix
        self.factor = factor
        self.system = system
        self.omega = omega

    def solve(self, rhs: np.ndarray, cfg: ScanConfig) -> PotentialSolution:
        if self.factor is not None:
            return solve(self.factor, rhs, self.system.cmap, self.omega)
        sol = solve_iterative(self.matrix, rhs, cfg.tol, cfg.max_iter, self.system.cmap, self.omega)
        if not sol.converged:
            raise SolverError(f"GMRES did not reach tol {cfg.tol:g} (residual {sol.residual:.2e})")
        return sol


def _position(cfg: ScanConfig, z: float, configs: list[_Config], ref_index: int,
              defect: np.ndarray, sigma_d: np.ndarray) -> tuple[SignalPoint, float]:
    t0 = time.perf_counter()
    mesh = cfg.mesh
    main, ref = configs[0], configs[ref_index]
    try:
        sols, refs = [], []
        for coil in (1, 2):
            rhs = assemble_rhs(mesh, main.system.cmap, coil, z, cfg.coil, cfg.current_density())
            rhs[main.system.pinned] = 0.0
            sols.append(main.solve(rhs, cfg))
            refs.append(sols[-1] if ref is main else ref.solve(rhs, cfg))
        mat = cfg.materials
        mu_d = float(mat.mu.get(Region.DEFECT, MU0))
        dz = np.zeros((2, 2), dtype=complex)
        for k in range(2):
            for l in range(2):
                dz[k, l] = delta_impedance(sols[k], refs[l], mesh, defect, cfg.mu_eps, mu_d,
                                           sigma_d, mat.sigma_eps, mat.omega, cfg.conjugate)
        point = SignalPoint.from_delta(z, dz)
    except (SolverError, ValueError, ArithmeticError) as exc:
        log.error("position z=%g failed: %s", z, exc)
        point = SignalPoint.failure(z)
    return point, time.perf_counter() - t0


def run_scan(cfg: ScanConfig) -> ImpedanceTrace:
    """Partition, assemble, factor each configuration once, then scan all positions."""
    t_start = time.perf_counter()
    cfg.check()
    mesh = cfg.mesh
    timings = dict(partition=0.0, assemble=0.0, reduce=0.0, factorize=0.0, solve=0.0)

    t0 = time.perf_counter()
    try:
        pmap = partition_tets(mesh, cfg.n_parts, cfg.seed)
    except ValueError as exc:
        raise StageError("partition", str(exc)) from None
    timings["partition"] = time.perf_counter() - t0

    tables = [cfg.materials, cfg.reference_materials()]
    keys: list[str] = []
    configs: list[_Config] = []
    perm = None
    for table in tables:
        key = table.key(mesh)
        if key in keys:
            continue
        keys.append(key)
        try:
            system, t = assemble_system(mesh, table, pmap, cfg.workers)
            t0 = time.perf_counter()
            system = apply_essential_bc(system, mesh, table.bc_penalty)
        except ValueError as exc:
            raise StageError("assemble", str(exc)) from None
        matrix = build_global(system)
        # pinning and the merge into one global matrix count as reduction
        timings["assemble"] += t["assemble"]
        timings["reduce"] += t["reduce"] + time.perf_counter() - t0
        factor = None
        if cfg.solver == "direct":
            t0 = time.perf_counter()
            try:
                if perm is None:
                    perm = fill_reducing_permutation(mesh, system.cmap)
                factor = factorize(matrix, perm, system.n_a)
            except SolverError as exc:
                raise StageError("factorize", str(exc)) from None
            timings["factorize"] += time.perf_counter() - t0
            log.info("factorization %d: key=%s fill=%d", len(keys), key, factor.fill)
        configs.append(_Config(matrix, factor, system, table.omega))
    ref_index = len(configs) - 1

    defect = np.flatnonzero(mesh.tet_region == Region.DEFECT)
    sigma_d = cfg.materials.tet_sigma(mesh)[defect]
    positions = [float(z) for z in cfg.positions]

    t0 = time.perf_counter()
    if cfg.workers > 1 and len(positions) > 1:
        # round-robin: worker w takes positions w, w + W, w + 2W, ...
        lanes = [positions[w::cfg.workers] for w in range(cfg.workers)]
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            futures = [ex.submit(lambda zs: [_position(cfg, z, configs, ref_index, defect, sigma_d)
                                             for z in zs], lane) for lane in lanes]
            results = [r for f in futures for r in f.result()]
    else:
        results = [_position(cfg, z, configs, ref_index, defect, sigma_d) for z in positions]
    timings["solve"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start

    points = [p for p, _ in results]
    by_z = {p.z: dt for p, dt in results}
    trace = ImpedanceTrace(points, timings, factorizations=len(keys) if cfg.solver == "direct" else 0,
                           position_times=[by_z[z] for z in sorted(by_z)], workers=cfg.workers,
                           config_hash=cfg.config_hash)
    if cfg.output:
        write_trace_csv(trace, cfg.output)
    return trace


# ------------------------------------------------------------------ output

def _fmt(v: float) -> str:
    return f"{v:.12g}"


def write_trace_csv(trace: ImpedanceTrace, path: str | Path) -> None:
    """Signal rows sorted by z. Timing lines start with ``# timing`` so runs can
    be compared byte for byte after dropping them."""
    path = Path(path)
    lines = [f"# config_hash {trace.config_hash or '-'}",
             f"{TIMING_PREFIX}workers={trace.workers} factorizations={trace.factorizations}"]
    for k, v in trace.timings.items():
        lines.append(f"{TIMING_PREFIX}{k}={v:.6f}")
    if trace.position_times:
        lines.append(f"{TIMING_PREFIX}position_median={float(np.median(trace.position_times)):.6f}")
    lines.append(",".join(CSV_COLUMNS))
    for p in sorted(trace.points, key=lambda q: q.z):
        vals = [p.z]
        for c in [*p.delta_z.ravel(), p.z_fa, p.z_f3]:
            vals += [c.real, c.imag]
        lines.append(",".join(_fmt(v) for v in vals))
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise StageError("output", f"cannot write {path}: {exc}") from None


def read_trace_csv(path: str | Path) -> ImpedanceTrace:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise StageError("output", f"cannot read {path}: {exc}") from None
    meta = [ln for ln in text.splitlines() if ln.startswith("#")]
    body = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if not body or body[0].split(",") != CSV_COLUMNS:
        raise StageError("output", f"{path}: missing or unexpected header")
    timings, workers, nfact, chash = {}, 1, 0, ""
    for ln in meta:
        if ln.startswith("# config_hash "):
            chash = ln.split()[-1].strip("-")
        elif ln.startswith(TIMING_PREFIX):
            for item in ln[len(TIMING_PREFIX):].split():
                k, _, v = item.partition("=")
                if k == "workers":
                    workers = int(v)
                elif k == "factorizations":
                    nfact = int(v)
                else:
                    timings[k] = float(v)
    points = []
    for row in csv.reader(body[1:]):
        v = [float(x) for x in row]
        c = [complex(v[i], v[i + 1]) for i in range(1, 13, 2)]
        dz = np.array(c[:4]).reshape(2, 2)
        failed = any(math.isnan(x) for x in v[1:])
        points.append(SignalPoint(v[0], dz, c[4], c[5], failed))
    timings.pop("position_median", None)
    return ImpedanceTrace(points, timings, nfact, [], workers, chash)


# ----------------------------------------------------------------- speedup

@dataclass
class SpeedupRow:
    workers: int
    t_total: float
    speedup: float          # t_serial / t_total
    ratio: float            # t_total / t_serial, the inverse form
    assemble_speedup: float
    position_speedup: float


def speedup_report(traces: list[ImpedanceTrace]) -> list[SpeedupRow]:
    """Speedup of each run against the single-worker run of the same config."""
    if not traces:
        raise ValueError("no runs given")
    hashes = {t.config_hash for t in traces}
    if len(hashes) > 1:
        raise ValueError(f"runs come from different configs: {sorted(hashes)}")
    serial = [t for t in traces if t.workers == 1]
    if not serial:
        raise ValueError("a single-worker run is required as the baseline")
    s = serial[0].timings

    def ratio(a, b):
        return a / b if b > 0 else float("nan")

    rows = []
    for t in sorted(traces, key=lambda q: q.workers):
        tt = t.timings
        rows.append(SpeedupRow(t.workers, tt["total"], ratio(s["total"], tt["total"]),
                               ratio(tt["total"], s["total"]),
                               ratio(s["assemble"], tt["assemble"]), ratio(s["solve"], tt["solve"])))
    return rows


def format_speedup(rows: list[SpeedupRow]) -> str:
    out = ["workers  t_total[s]  speedup  t_p/t_serial  assemble  positions"]
    for r in rows:
        out.append(f"{r.workers:7d}  {r.t_total:10.3f}  {r.speedup:7.3f}  {r.ratio:12.3f}  "
                   f"{r.assemble_speedup:8.3f}  {r.position_speedup:9.3f}")
    return "\n".join(out)
