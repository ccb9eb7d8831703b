"""Run configuration: flat ``key = value`` text with ``[section]`` headers, SI units.

Sections and keys (all optional unless noted)::

    [mesh]       file = path.msh            (exactly one of file / generator)
                 generator = tube
                 resolution, enclosure_radius, z_min, z_max, tube_inner_radius,
                 tube_outer_radius, tube_z_min, tube_z_max, angular_segments,
                 radial_spacing, axial_spacing, mirror_z
    [tsp]        z_min, z_max, inner_radius, outer_radius       (section enables a TSP)
    [defect]     z_min, z_max, inner_radius, outer_radius, angle_start, angle_extent
    [probe]      inner_radius, outer_radius, height, separation, current
    [materials]  frequency (Hz, required), sigma_tube, sigma_tsp, sigma_defect,
                 mu_tube, mu_tsp, mu_defect, mu_vacuum, mu_eps, mu_tilde (or "auto"),
                 delta_gauge, sigma_eps_ratio, bc_penalty, ibc, vacuum_sigma_eps,
                 l22_sigma_eps
    [scan]       positions = z0, z1, ...   (m, required, strictly increasing)
    [solver]     method = direct | iterative, tol, max_iter, conjugate
    [run]        workers, partitions, seed, output
"""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .assembly import MU0, CoilGeometry, MaterialTable
from .mesh import Mesh, Region, load_mesh
from .meshgen import DefectSpec, TSPSpec, TubeGeometry, generate_tube_mesh


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = f"line {line}: " if line is not None else (f"{key}: " if key else "")
        super().__init__(where + message)
        self.line = line
        self.key = key


@dataclass
class MeshSection:
    file: str | None = None
    generator: str | None = None
    resolution: int = 4
    enclosure_radius: float = 20e-3
    z_min: float = -30e-3
    z_max: float = 30e-3
    tube_inner_radius: float = 8.5e-3
    tube_outer_radius: float = 9.5e-3
    tube_z_min: float | None = None
    tube_z_max: float | None = None
    angular_segments: int | None = None
    radial_spacing: float | None = None
    axial_spacing: float | None = None
    mirror_z: float | None = None


@dataclass
class TSPSection:
    z_min: float = -5e-3
    z_max: float = 5e-3
    inner_radius: float = 9.5e-3
    outer_radius: float = 14e-3


@dataclass
class DefectSection:
    z_min: float = -1e-3
    z_max: float = 1e-3
    inner_radius: float = 9.0e-3
    outer_radius: float = 9.5e-3
    angle_start: float = 0.0
    angle_extent: float = 360.0


@dataclass
class ProbeSection:
    inner_radius: float = 6e-3
    outer_radius: float = 7.5e-3
    height: float = 2e-3
    separation: float = 3e-3
    current: float = 1.0


@dataclass
class MaterialsSection:
    frequency: float = 0.0
    sigma_tube: float = 1e6
    sigma_tsp: float = 5e6
    sigma_defect: float = 1e6
    mu_tube: float = MU0
    mu_tsp: float = MU0
    mu_defect: float = MU0
    mu_vacuum: float = MU0
    mu_eps: float = MU0
    mu_tilde: float | None = None
    delta_gauge: float = 1e-6
    sigma_eps_ratio: float = 1e-6
    bc_penalty: float = 1e13
    ibc: bool = False
    vacuum_sigma_eps: bool = False
    l22_sigma_eps: bool = False


@dataclass
class ScanSection:
    positions: list = field(default_factory=list)


@dataclass
class SolverSection:
    method: str = "direct"
    tol: float = 1e-8
    max_iter: int = 500
    conjugate: bool = False


@dataclass
class RunSection:
    workers: int = 1
    partitions: int = 4
    seed: int = 0
    output: str = "trace.csv"


SECTIONS = {"mesh": MeshSection, "tsp": TSPSection, "defect": DefectSection, "probe": ProbeSection,
            "materials": MaterialsSection, "scan": ScanSection, "solver": SolverSection,
            "run": RunSection}
OPTIONAL_SECTIONS = ("tsp", "defect")
POSITIVE = {
    "mesh": ("resolution", "enclosure_radius", "tube_inner_radius", "tube_outer_radius",
             "angular_segments", "radial_spacing", "axial_spacing"),
    "tsp": ("inner_radius", "outer_radius"),
    "defect": ("inner_radius", "outer_radius", "angle_extent"),
    "probe": ("inner_radius", "outer_radius", "height", "separation", "current"),
    "materials": ("frequency", "sigma_tube", "sigma_tsp", "sigma_defect", "mu_tube", "mu_tsp", "mu_defect",
                  "mu_vacuum", "mu_eps", "mu_tilde", "sigma_eps_ratio", "bc_penalty"),
    "solver": ("tol", "max_iter"),
    "run": ("workers", "partitions"),
}
NON_NEGATIVE = {"materials": ("delta_gauge",), "run": ("seed",)}


@dataclass
class RunConfig:
    mesh: MeshSection = field(default_factory=MeshSection)
    tsp: TSPSection | None = None
    defect: DefectSection | None = None
    probe: ProbeSection = field(default_factory=ProbeSection)
    materials: MaterialsSection = field(default_factory=MaterialsSection)
    scan: ScanSection = field(default_factory=ScanSection)
    solver: SolverSection = field(default_factory=SolverSection)
    run: RunSection = field(default_factory=RunSection)
    source: Path | None = field(default=None, compare=False)

    # -------------------------------------------------------------- builders

    @property
    def omega(self) -> float:
        return 2 * math.pi * self.materials.frequency

    def material_table(self) -> MaterialTable:
        m = self.materials
        sigma = {Region.TUBE: m.sigma_tube, Region.TSP: m.sigma_tsp, Region.DEFECT: m.sigma_defect,
                 Region.COIL_1: 0.0, Region.COIL_2: 0.0, Region.VACUUM: 0.0}
        mu = {Region.TUBE: m.mu_tube, Region.TSP: m.mu_tsp, Region.DEFECT: m.mu_defect,
              Region.COIL_1: m.mu_vacuum, Region.COIL_2: m.mu_vacuum, Region.VACUUM: m.mu_vacuum}
        return MaterialTable(omega=self.omega, sigma=sigma, mu=mu, mu_tilde=m.mu_tilde,
                             delta_gauge=m.delta_gauge, bc_penalty=m.bc_penalty,
                             sigma_eps=m.sigma_eps_ratio * m.sigma_tube, ibc=m.ibc,
                             vacuum_sigma_eps=m.vacuum_sigma_eps, l22_sigma_eps=m.l22_sigma_eps)

    def coil(self) -> CoilGeometry:
        p = self.probe
        return CoilGeometry(p.inner_radius, p.outer_radius, p.height, p.separation)

    def geometry(self) -> TubeGeometry:
        g, p = self.mesh, self.probe
        tsp = TSPSpec(**asdict(self.tsp)) if self.tsp else None
        defect = DefectSpec(**asdict(self.defect)) if self.defect else None
        return TubeGeometry(
            tube_inner_radius=g.tube_inner_radius, tube_outer_radius=g.tube_outer_radius,
            enclosure_radius=g.enclosure_radius, z_min=g.z_min, z_max=g.z_max,
            coil_inner_radius=p.inner_radius, coil_outer_radius=p.outer_radius,
            coil_height=p.height, coil_separation=p.separation,
            probe_positions=list(self.scan.positions) or [0.0],
            tube_z_min=g.tube_z_min, tube_z_max=g.tube_z_max, tsp=tsp, defect=defect,
            resolution=g.resolution, angular_segments=g.angular_segments,
            radial_spacing=g.radial_spacing, axial_spacing=g.axial_spacing, mirror_z=g.mirror_z)

    def build_mesh(self) -> Mesh:
        if self.mesh.file:
            path = Path(self.mesh.file)
            if not path.is_absolute() and self.source is not None:
                path = self.source.parent / path
            return load_mesh(path)
        return generate_tube_mesh(self.geometry())

    def scan_config(self, mesh: Mesh, workers: int | None = None):
        from .scan import ScanConfig

        return ScanConfig(mesh=mesh, materials=self.material_table(),
                          positions=list(self.scan.positions), coil=self.coil(),
                          mu_eps=self.materials.mu_eps, solver=self.solver.method,
                          tol=self.solver.tol, max_iter=self.solver.max_iter,
                          workers=workers or self.run.workers, n_parts=self.run.partitions,
                          seed=self.run.seed, current=self.probe.current,
                          conjugate=self.solver.conjugate, config_hash=self.hash())

    def hash(self) -> str:
        """Digest of everything that affects the signals (not workers or output path)."""
        text = dump_config(self, skip=(("run", "workers"), ("run", "output")))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# ------------------------------------------------------------------ parsing

def _convert(raw: str, typ, key: str):
    text = raw.strip()
    t = str(typ)
    if "None" in t and text.lower() in ("", "none", "auto"):
        return None
    try:
        if t.startswith("bool"):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if t.startswith("int"):
            return int(text)
        if t.startswith("float"):
            v = float(text)
            if not math.isfinite(v):
                raise ValueError(text)
            return v
        if t == "list":
            return [float(x) for x in text.replace(",", " ").split()]
        return text
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as {t.split(' ')[0]}", key=key) from None


def _check(cfg: RunConfig) -> None:
    for sec, keys in POSITIVE.items():
        obj = getattr(cfg, sec)
        if obj is None:
            continue
        for k in keys:
            v = getattr(obj, k)
            if v is not None and not v > 0:
                raise ConfigError(f"must be positive (got {v})", key=f"{sec}.{k}")
    for sec, keys in NON_NEGATIVE.items():
        for k in keys:
            v = getattr(getattr(cfg, sec), k)
            if v < 0:
                raise ConfigError(f"must be non-negative (got {v})", key=f"{sec}.{k}")
    if bool(cfg.mesh.file) == bool(cfg.mesh.generator):
        raise ConfigError("exactly one of mesh.file and mesh.generator is required", key="mesh")
    if cfg.mesh.generator and cfg.mesh.generator != "tube":
        raise ConfigError(f"unknown generator {cfg.mesh.generator!r}", key="mesh.generator")
    if cfg.mesh.z_max <= cfg.mesh.z_min:
        raise ConfigError("z_max must exceed z_min", key="mesh.z_max")
    pos = cfg.scan.positions
    if not pos:
        raise ConfigError("at least one position is required", key="scan.positions")
    if any(b <= a for a, b in zip(pos[:-1], pos[1:])):
        raise ConfigError("positions must be strictly increasing", key="scan.positions")
    if cfg.solver.method not in ("direct", "iterative"):
        raise ConfigError(f"unknown method {cfg.solver.method!r}", key="solver.method")
    if cfg.probe.outer_radius <= cfg.probe.inner_radius:
        raise ConfigError("outer_radius must exceed inner_radius", key="probe.outer_radius")


def parse_config_text(text: str, source: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   strict=True, empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(source or "<config>"))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", line=exc.lineno) from None
    except configparser.ParsingError as exc:
        raise ConfigError(f"cannot parse {exc.errors[0][1].strip()!r}", line=exc.errors[0][0]) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(exc.message.split(": ", 1)[-1] if hasattr(exc, "message") else str(exc),
                          line=exc.lineno) from None

    cfg = RunConfig(source=source)
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError("unknown section", key=sec)
        cls = SECTIONS[sec]
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, raw in cp.items(sec):
            if key not in types:
                raise ConfigError("unknown key", key=f"{sec}.{key}")
            values[key] = _convert(raw, types[key], f"{sec}.{key}")
        setattr(cfg, sec, cls(**values))
    if not cp.has_option("materials", "frequency"):
        raise ConfigError("required", key="materials.frequency")
    _check(cfg)
    return cfg


def parse_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, path)


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def dump_config(cfg: RunConfig, skip=()) -> str:
    """Every value written explicitly; parsing the result gives an equal config."""
    out = []
    for sec in SECTIONS:
        obj = getattr(cfg, sec)
        if obj is None:
            continue
        out.append(f"[{sec}]")
        for f in fields(obj):
            if (sec, f.name) in skip:
                continue
            v = getattr(obj, f.name)
            if sec == "mesh" and f.name in ("file", "generator") and v is None:
                continue
            out.append(f"{f.name} = {_format(v)}")
        out.append("")
    return "\n".join(out)
