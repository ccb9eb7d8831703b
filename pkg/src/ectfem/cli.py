"""Command-line front end.

Exit codes: 0 ok, 2 config, 3 mesh, 4 solver, 5 I/O. The worker count comes
from ``--workers``, else the ECTFEM_WORKERS environment variable, else the
config file.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_MESH, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4, 5
WORKERS_ENV = "ECTFEM_WORKERS"
TRACE_NAME = "trace.csv"

log = logging.getLogger("ectfem")


class CliError(Exception):
    def __init__(self, stage: str, message: str, code: int):
        super().__init__(message)
        self.stage = stage
        self.code = code


def _workers(args, cfg) -> int:
    if getattr(args, "workers", None):
        return args.workers
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            w = int(env)
        except ValueError:
            raise CliError("config", f"{WORKERS_ENV}={env!r} is not an integer", EXIT_CONFIG) from None
        if w < 1:
            raise CliError("config", f"{WORKERS_ENV} must be >= 1", EXIT_CONFIG)
        return w
    return cfg.run.workers


def _load_config(args):
    from .config import parse_config

    if not args.config:
        raise CliError("config", "a --config file is required", EXIT_CONFIG)
    return parse_config(args.config)


def _mesh(args, cfg=None):
    from .mesh import load_mesh

    if getattr(args, "mesh", None):
        return load_mesh(args.mesh)
    return cfg.build_mesh()


def _trace_path(p: str) -> Path:
    path = Path(p)
    return path / TRACE_NAME if path.is_dir() else path


# ---------------------------------------------------------------- commands

def cmd_validate_mesh(args) -> int:
    from .mesh import validate

    cfg = None if args.mesh else _load_config(args)
    mesh = _mesh(args, cfg)
    issues = validate(mesh)
    print(f"nodes={mesh.n_nodes} tets={mesh.n_tets} faces={len(mesh.faces)}")
    for msg in issues:
        print(f"  {msg}")
    if issues:
        raise CliError("mesh", f"{len(issues)} issue(s) found", EXIT_MESH)
    print("mesh ok")
    return EXIT_OK


def cmd_partition(args) -> int:
    from .partition import partition_stats, partition_tets

    cfg = None if args.mesh else _load_config(args)
    mesh = _mesh(args, cfg)
    parts = args.parts or (cfg.run.partitions if cfg else 4)
    seed = args.seed if args.seed is not None else (cfg.run.seed if cfg else 0)
    pmap = partition_tets(mesh, parts, seed)
    stats = partition_stats(pmap, mesh)
    if args.out:
        np.savetxt(args.out, pmap.part_of, fmt="%d", header=stats.footer()[2:])
    for p, n in enumerate(stats.sizes):
        print(f"part {p}: {n} tets")
    print(stats.footer())
    return EXIT_OK


def cmd_assemble(args) -> int:
    from .assembly import apply_essential_bc, assemble_system
    from .partition import partition_tets

    cfg = _load_config(args)
    mesh = cfg.build_mesh()
    mat = cfg.material_table()
    pmap = partition_tets(mesh, cfg.run.partitions, cfg.run.seed)
    system, t = assemble_system(mesh, mat, pmap, _workers(args, cfg))
    system = apply_essential_bc(system, mesh, mat.bc_penalty)
    for name, blk in system.blocks().items():
        print(f"{name}: shape={blk.shape[0]}x{blk.shape[1]} nnz={blk.nnz}")
    print(f"# assemble={t['assemble']:.3f}s reduce={t['reduce']:.3f}s parts={pmap.n_parts}")
    if args.dump_blocks:
        out = Path(args.dump_blocks)
        out.mkdir(parents=True, exist_ok=True)
        for name, blk in system.blocks().items():
            blk.dump(out / f"{name}.txt")
        print(f"blocks written to {out}")
    return EXIT_OK


def cmd_solve_one(args) -> int:
    from .scan import run_scan

    cfg = _load_config(args)
    z = args.z if args.z is not None else cfg.scan.positions[0]
    cfg.scan.positions = [z]
    mesh = cfg.build_mesh()
    trace = run_scan(cfg.scan_config(mesh, _workers(args, cfg)))
    p = trace.points[0]
    if p.failed:
        raise CliError("solve", f"position z={z:g} failed", EXIT_SOLVER)
    for k in range(2):
        for l in range(2):
            print(f"dZ{k + 1}{l + 1} = {p.delta_z[k, l]:.6e}")
    print(f"Z_FA = {p.z_fa:.6e}")
    print(f"Z_F3 = {p.z_f3:.6e}")
    return EXIT_OK


def cmd_scan(args) -> int:
    from .scan import run_scan, write_trace_csv

    cfg = _load_config(args)
    mesh = cfg.build_mesh()
    scfg = cfg.scan_config(mesh, _workers(args, cfg))
    trace = run_scan(scfg)
    out = Path(args.out or cfg.run.output)
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / TRACE_NAME
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    write_trace_csv(trace, out)
    t = trace.timings
    print(f"{len(trace.points)} positions, {trace.factorizations} factorization(s), "
          f"{len(trace.failed)} failed; total {t['total']:.2f}s -> {out}")
    return EXIT_SOLVER if trace.failed else EXIT_OK


def cmd_report(args) -> int:
    from .plotting import plot_comparison, plot_impedance_plane, plot_trace
    from .scan import format_speedup, read_trace_csv, speedup_report

    if args.compare:
        a, b = (read_trace_csv(_trace_path(p)) for p in args.compare)
        if len(a.points) != len(b.points) or not np.array_equal(a.z, b.z):
            raise CliError("report", "runs have different probe positions", EXIT_IO)
        sa, sb = a.signals(), b.signals()
        scale = max(np.abs(sa).max(initial=0.0), np.abs(sb).max(initial=0.0))
        dev = np.abs(sa - sb).max(initial=0.0)
        print(f"max signal deviation: {dev:.6e} (relative {dev / scale if scale else 0.0:.6e})")
        if args.figures:
            out = Path(args.figures)
            out.mkdir(parents=True, exist_ok=True)
            plot_comparison([a, b], list(args.compare), out / "compare.png")
        return EXIT_OK
    if args.speedup:
        traces = [read_trace_csv(_trace_path(p)) for p in args.speedup]
        try:
            rows = speedup_report(traces)
        except ValueError as exc:
            raise CliError("report", str(exc), EXIT_CONFIG) from None
        print(format_speedup(rows))
        return EXIT_OK
    if not args.runs:
        raise CliError("report", "give a run, --compare A B or --speedup RUN...", EXIT_CONFIG)
    for run in args.runs:
        path = _trace_path(run)
        trace = read_trace_csv(path)
        out = Path(args.figures) if args.figures else path.parent
        out.mkdir(parents=True, exist_ok=True)
        stem = path.stem
        f1 = plot_trace(trace, out / f"{stem}_signals.png", title=stem)
        f2 = plot_impedance_plane(trace, out / f"{stem}_plane.png", title=stem)
        sig = trace.signals()
        if len(sig):
            i = int(np.nanargmax(np.abs(sig[:, 4])))
            print(f"{path}: {len(trace.points)} positions, peak |Z_FA| = {abs(sig[i, 4]):.6e} "
                  f"at z = {trace.z[i]:.6g} m")
        print(f"figures: {f1} {f2}")
    return EXIT_OK


def cmd_dump_config(args) -> int:
    from .config import dump_config

    sys.stdout.write(dump_config(_load_config(args)))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ectfem", description="A-V eddy-current FEM probe scans.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    def add_config(sp, required=True):
        sp.add_argument("-c", "--config", required=required, help="run configuration file")

    def add_workers(sp):
        sp.add_argument("-w", "--workers", type=int, default=None,
                        help=f"worker threads (overrides {WORKERS_ENV} and the config)")

    sp = sub.add_parser("validate-mesh", help="check mesh orientation, tags and boundary labels")
    add_config(sp, required=False)
    sp.add_argument("--mesh", help="Gmsh 2.2 ASCII file to check instead of the config's mesh")
    sp.set_defaults(func=cmd_validate_mesh)

    sp = sub.add_parser("partition", help="partition the tets and print balance statistics")
    add_config(sp, required=False)
    sp.add_argument("--mesh", help="Gmsh 2.2 ASCII file instead of the config's mesh")
    sp.add_argument("-p", "--parts", type=int, help="number of parts (default: config)")
    sp.add_argument("--seed", type=int, help="seed for the first grown part (default: config)")
    sp.add_argument("-o", "--out", help="write one part id per tet to this file")
    sp.set_defaults(func=cmd_partition)

    sp = sub.add_parser("assemble", help="assemble the block system of the with-defect configuration")
    add_config(sp)
    add_workers(sp)
    sp.add_argument("--dump-blocks", metavar="DIR", help="write M11, M12, M21, M22 as coordinate text")
    sp.set_defaults(func=cmd_assemble)

    sp = sub.add_parser("solve-one", help="impedance signals at a single probe position")
    add_config(sp)
    add_workers(sp)
    sp.add_argument("-z", type=float, help="probe position in m (default: first configured)")
    sp.set_defaults(func=cmd_solve_one)

    sp = sub.add_parser("scan", help="full probe scan, CSV trace output")
    add_config(sp)
    add_workers(sp)
    sp.add_argument("-o", "--out", help="CSV file or run directory (default: run.output)")
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("report", help="figures, run comparison or speedup table")
    sp.add_argument("runs", nargs="*", help="trace CSV files or run directories to plot")
    sp.add_argument("--figures", metavar="DIR", help="figure directory (default: next to the CSV)")
    sp.add_argument("--compare", nargs=2, metavar="RUN", help="print the max signal deviation of two runs")
    sp.add_argument("--speedup", nargs="+", metavar="RUN", help="speedup table over runs with different worker counts")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("dump-config", help="print the configuration with all defaults filled in")
    add_config(sp)
    sp.set_defaults(func=cmd_dump_config)
    return p


def main(argv: list[str] | None = None) -> int:
    from .config import ConfigError
    from .mesh import MeshError
    from .scan import StageError
    from .solver import SolverError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    stage_codes = {"config": EXIT_CONFIG, "partition": EXIT_MESH, "mesh": EXIT_MESH,
                   "assemble": EXIT_SOLVER, "factorize": EXIT_SOLVER, "solve": EXIT_SOLVER,
                   "output": EXIT_IO}
    cmd = args.command
    try:
        return args.func(args)
    except CliError as exc:
        print(f"ectfem {cmd} [{exc.stage}]: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"ectfem {cmd} [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MeshError as exc:
        print(f"ectfem {cmd} [mesh]: {exc}", file=sys.stderr)
        return EXIT_MESH
    except StageError as exc:
        print(f"ectfem {cmd} {exc}", file=sys.stderr)
        return stage_codes.get(exc.stage, EXIT_SOLVER)
    except SolverError as exc:
        print(f"ectfem {cmd} [solver]: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"ectfem {cmd} [io]: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"ectfem {cmd} [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
