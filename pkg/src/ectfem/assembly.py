"""P1 element matrices and partitioned assembly of the A-V block system.

Unknowns are the nodal vector potential A (dof ``3*node + component``) on
the whole mesh and the nodal scalar potential V on conductor nodes (dof from
the ConductorIndexMap). The four blocks are

    M11: curl-curl / mu + div-div / mu_tilde - i*omega*sigma * mass
    M12: -sigma * int grad(V) . Phi             (rows A, cols V)
    M21: -sigma * int A . grad(phi)             (rows V, cols A)
    M22: -(1/(i*omega)) * sigma * stiffness + delta_gauge * mu * sigma * mass

plus optional impedance boundary terms on TSP faces.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
import time

import numpy as np
import scipy.sparse as sp

from .mesh import (CONDUCTOR_REGIONS, Boundary, ConductorIndexMap, Mesh, Region,
                   conductor_map)
from .partition import PartitionMap

MU0 = 4e-7 * math.pi
SELECTORS = ("11", "12", "21", "22", "rhs-mass")
_CHUNK = 16384


@dataclass(frozen=True)
class MaterialTable:
    """Physical parameters of one material configuration (SI units)."""

    omega: float
    sigma: dict = field(default_factory=dict)   # Region -> S/m
    mu: dict = field(default_factory=dict)      # Region -> H/m
    mu_tilde: float | None = None               # None: volume-weighted harmonic mean
    delta_gauge: float = 1e-6
    bc_penalty: float = 1e13
    sigma_eps: float = 1.0
    ibc: bool = False
    vacuum_sigma_eps: bool = False              # -i*omega*sigma_eps mass in insulators
    l22_sigma_eps: bool = False                 # stiffness of M22 with sigma_eps

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if not self.sigma_eps > 0:
            raise ValueError("sigma_eps must be positive")
        if self.delta_gauge < 0:
            raise ValueError("delta_gauge must be non-negative")
        for r, s in self.sigma.items():
            if s < 0:
                raise ValueError(f"sigma of {Region(r).name} must be >= 0")
        for r, m in self.mu.items():
            if not m > 0:
                raise ValueError(f"mu of {Region(r).name} must be positive")

    @classmethod
    def standard(cls, frequency: float, sigma_tube: float = 1e6, **kw) -> "MaterialTable":
        sigma = {Region.TUBE: sigma_tube, Region.TSP: 5 * sigma_tube,
                 Region.DEFECT: sigma_tube, Region.COIL_1: 0.0, Region.COIL_2: 0.0,
                 Region.VACUUM: 0.0}
        mu = {r: MU0 for r in Region}
        kw.setdefault("sigma_eps", 1e-6 * sigma_tube)
        return cls(omega=2 * math.pi * frequency, sigma=sigma, mu=mu, **kw)

    def with_region(self, region: Region, sigma: float, mu: float) -> "MaterialTable":
        s, m = dict(self.sigma), dict(self.mu)
        s[region], m[region] = sigma, mu
        return replace(self, sigma=s, mu=m)

    def conductor_regions(self) -> tuple[Region, ...]:
        return tuple(r for r in CONDUCTOR_REGIONS if not (self.ibc and r == Region.TSP))

    def conductor_map(self, mesh: Mesh) -> ConductorIndexMap:
        return conductor_map(mesh, exclude=(Region.TSP,) if self.ibc else ())

    def _effective(self, region: Region) -> Region:
        # with the impedance condition the TSP volume is replaced by vacuum
        return Region.VACUUM if self.ibc and region == Region.TSP else region

    def tet_sigma(self, mesh: Mesh) -> np.ndarray:
        lut = np.zeros(max(int(r) for r in Region) + 1)
        for r in Region:
            s = self.sigma.get(self._effective(r), 0.0)
            if self.vacuum_sigma_eps and self._effective(r) not in CONDUCTOR_REGIONS:
                s = self.sigma_eps
            lut[int(r)] = s
        return lut[mesh.tet_region]

    def tet_mu(self, mesh: Mesh) -> np.ndarray:
        lut = np.full(max(int(r) for r in Region) + 1, MU0)
        for r in Region:
            lut[int(r)] = self.mu.get(self._effective(r), MU0)
        return lut[mesh.tet_region]

    def resolved_mu_tilde(self, mesh: Mesh) -> float:
        if self.mu_tilde is not None:
            return self.mu_tilde
        vol = mesh.volumes()
        return float(vol.sum() / (vol / self.tet_mu(mesh)).sum())

    def tsp_impedance(self) -> complex:
        from .signals import surface_impedance

        return surface_impedance(self.omega, self.mu.get(Region.TSP, MU0), self.sigma[Region.TSP])

    def key(self, mesh: Mesh) -> str:
        """Identifier that is equal iff two tables produce the same system on ``mesh``."""
        import hashlib

        h = hashlib.sha256()
        for arr in (self.tet_sigma(mesh), self.tet_mu(mesh)):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr((self.omega, self.resolved_mu_tilde(mesh), self.delta_gauge, self.bc_penalty,
                       self.sigma_eps, self.ibc, self.l22_sigma_eps,
                       self.sigma.get(Region.TSP) if self.ibc else None)).encode())
        return h.hexdigest()[:16]


# ------------------------------------------------------------ element level

def tet_gradients(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric gradients (..., 4, 3) and volumes (...) of tets X (..., 4, 3)."""
    X = np.asarray(X, dtype=float)
    D = X[..., 1:, :] - X[..., :1, :]
    vol = np.linalg.det(D) / 6.0
    if np.any(vol <= 0):
        raise ValueError("degenerate or negatively oriented tetrahedron")
    g = np.swapaxes(np.linalg.inv(D), -1, -2)
    G = np.concatenate([-g.sum(axis=-2, keepdims=True), g], axis=-2)
    return G, vol


_MASS4 = (np.ones((4, 4)) + np.eye(4)) / 20.0
_MASS3 = (np.ones((3, 3)) + np.eye(3)) / 12.0
_I3 = np.eye(3)


def _expand(s, nd):
    s = np.asarray(s, dtype=float)
    return s.reshape(s.shape + (1,) * nd)


def element_L11(X, mu, mu_tilde, sigma, omega):
    G, vol = tet_gradients(X)
    gg = np.einsum("...ai,...bi->...ab", G, G)
    # (grad_a x e_c).(grad_b x e_d) = (g_a.g_b) delta_cd - (g_a)_d (g_b)_c
    curl = gg[..., :, None, :, None] * _I3[:, None, :] - np.einsum("...ad,...bc->...acbd", G, G)
    div = np.einsum("...ac,...bd->...acbd", G, G)
    mass = _MASS4[:, None, :, None] * _I3[:, None, :]
    v = _expand(vol, 4)
    K = v * (curl / _expand(mu, 4) + div / _expand(mu_tilde, 4)) \
        - 1j * omega * _expand(sigma, 4) * v * mass
    return K.reshape(K.shape[:-4] + (12, 12))


def element_L12(X, sigma):
    """Rows (node a, component c) of A, columns node b of V."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("coupling block requires a conductor tet (sigma > 0)")
    G, vol = tet_gradients(X)
    # -sigma * int lambda_a (grad lambda_b)_c = -sigma |K|/4 (g_b)_c
    K = -_expand(sigma * vol / 4.0, 3) * np.broadcast_to(
        np.swapaxes(G, -1, -2)[..., None, :, :], G.shape[:-2] + (4, 3, 4))
    return (K + 0j).reshape(K.shape[:-3] + (12, 4))


def element_L21(X, sigma):
    return np.swapaxes(element_L12(X, sigma), -1, -2).copy()


def element_L22(X, sigma, omega, delta_gauge, mu, sigma_stiffness=None):
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("scalar-potential block requires a conductor tet (sigma > 0)")
    G, vol = tet_gradients(X)
    s_k = sigma if sigma_stiffness is None else np.asarray(sigma_stiffness, dtype=float)
    stiff = np.einsum("...ai,...bi->...ab", G, G) * _expand(vol, 2)
    mass = _MASS4 * _expand(vol, 2)
    return -_expand(s_k, 2) / (1j * omega) * stiff \
        + _expand(delta_gauge * np.asarray(mu) * sigma, 2) * mass


def element_mass_vector(X):
    """P1 vector mass matrix (..., 12, 12): int lambda_a lambda_b delta_cd."""
    _, vol = tet_gradients(X)
    M = _expand(vol, 4) * (_MASS4[:, None, :, None] * _I3[:, None, :])
    return M.reshape(M.shape[:-4] + (12, 12))


def triangle_geometry(T):
    """Surface gradients (..., 3, 3), unit normals (..., 3) and areas of triangles."""
    T = np.asarray(T, dtype=float)
    e1 = T[..., 1, :] - T[..., 0, :]
    e2 = T[..., 2, :] - T[..., 0, :]
    nrm = np.cross(e1, e2)
    area2 = np.linalg.norm(nrm, axis=-1)
    if np.any(area2 <= 0):
        raise ValueError("zero-area triangle")
    n = nrm / area2[..., None]
    J = np.stack([e1, e2], axis=-1)                         # (..., 3, 2)
    JtJ = np.einsum("...ia,...ib->...ab", J, J)
    g12 = np.einsum("...ia,...ab->...bi", J, np.linalg.inv(JtJ))  # rows: grad lambda_1, lambda_2
    G = np.concatenate([-g12.sum(axis=-2, keepdims=True), g12], axis=-2)
    return G, n, area2 / 2.0


def element_ibc(T, Z, omega):
    """Impedance boundary contributions of triangles T (..., 3, 3).

    Returns (AA 9x9, AV 9x3, VA 3x9, VV 3x3). The A rows carry
    -(1/Z) int (i*omega*A_t + grad_t V).Phi_t; the V rows carry the same
    tangential field tested with grad_t phi and scaled by 1/(i*omega), like
    the volume scalar-potential equation, which keeps VA = AV^T.
    """
    if Z == 0:
        raise ValueError("surface impedance must be non-zero")
    G, n, area = triangle_geometry(T)
    P = _I3 - n[..., :, None] * n[..., None, :]
    a = _expand(area, 4)
    AA = -(1j * omega / Z) * a * (_MASS3[:, None, :, None] * P[..., None, :, None, :])
    AA = AA.reshape(AA.shape[:-4] + (9, 9))
    a3 = _expand(area, 3)
    # -(1/Z) int lambda_a (grad_t lambda_b)_c ; grad_t of a P1 trace is G itself
    AV = -(1.0 / Z) * a3 / 3.0 * np.broadcast_to(
        np.swapaxes(G, -1, -2)[..., None, :, :], G.shape[:-2] + (3, 3, 3))
    AV = AV.reshape(AV.shape[:-3] + (9, 3))
    VA = np.swapaxes(AV, -1, -2).copy()
    VV = -(1.0 / (1j * omega * Z)) * _expand(area, 2) * np.einsum("...ai,...bi->...ab", G, G)
    return AA, AV, VA, VV


# ------------------------------------------------------------- sparse blocks

@dataclass
class SparseComplexBlock:
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    shape: tuple[int, int]
    space: tuple[str, str]          # ("A" | "V", "A" | "V")
    canonical: bool = False

    @classmethod
    def empty(cls, shape, space):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), np.zeros(0, dtype=complex), tuple(shape), tuple(space), True)

    @classmethod
    def from_sparse(cls, mat, space):
        c = sp.csr_matrix(mat, dtype=complex)
        c.sum_duplicates()
        c.sort_indices()
        coo = c.tocoo()
        return cls(coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data.copy(),
                   c.shape, tuple(space), True)

    @property
    def nnz(self) -> int:
        return len(self.vals)

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=self.shape, dtype=complex)

    def canonicalize(self) -> "SparseComplexBlock":
        if self.canonical:
            return self
        return SparseComplexBlock.from_sparse(self.to_csr(), self.space)

    def dump(self, path: str | Path) -> None:
        """Coordinate text format: ``i j re im`` per line, 0-based, sorted."""
        b = self.canonicalize()
        with open(path, "w") as fh:
            fh.write(f"# shape {b.shape[0]} {b.shape[1]} space {b.space[0]}{b.space[1]}\n")
            for i, j, v in zip(b.rows, b.cols, b.vals):
                fh.write(f"{i} {j} {v.real:.17g} {v.imag:.17g}\n")

    @classmethod
    def load(cls, path: str | Path) -> "SparseComplexBlock":
        with open(path) as fh:
            head = fh.readline().split()
            shape = (int(head[2]), int(head[3]))
            space = (head[5][0], head[5][1])
            body = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
        if not body:
            return cls.empty(shape, space)
        data = np.loadtxt(body, ndmin=2)
        if data.size == 0:
            return cls.empty(shape, space)
        return cls(data[:, 0].astype(np.int64), data[:, 1].astype(np.int64),
                   data[:, 2] + 1j * data[:, 3], shape, space, False).canonicalize()


def reduce_blocks(blocks: list[SparseComplexBlock]) -> SparseComplexBlock:
    """Merge per-part blocks: patterns are united, coincident entries summed."""
    if not blocks:
        raise ValueError("nothing to reduce")
    shape, space = blocks[0].shape, blocks[0].space
    for b in blocks[1:]:
        if b.shape != shape or b.space != space:
            raise ValueError("cannot reduce blocks with different row/column spaces")
    acc = blocks[0].to_csr()
    for b in blocks[1:]:
        acc = acc + b.to_csr()
    return SparseComplexBlock.from_sparse(acc, space)


@dataclass
class BlockSystem:
    m11: SparseComplexBlock
    m12: SparseComplexBlock
    m21: SparseComplexBlock
    m22: SparseComplexBlock
    cmap: ConductorIndexMap
    rhs: np.ndarray | None = None
    pinned: np.ndarray | None = None

    @property
    def n_a(self) -> int:
        return self.m11.shape[0]

    @property
    def n_v(self) -> int:
        return self.m22.shape[0]

    def check(self) -> None:
        na, nv = self.n_a, self.n_v
        if not (self.m11.shape == (na, na) and self.m12.shape == (na, nv)
                and self.m21.shape == (nv, na) and self.m22.shape == (nv, nv)):
            raise ValueError("block dimensions are inconsistent")
        if self.rhs is not None and len(self.rhs) != na + nv:
            raise ValueError("rhs length does not match the block system")

    def blocks(self) -> dict[str, SparseComplexBlock]:
        return {"M11": self.m11, "M12": self.m12, "M21": self.m21, "M22": self.m22}


@dataclass
class _Context:
    """Per-mesh, per-material arrays shared read-only by all workers."""

    mesh: Mesh
    mat: MaterialTable
    cmap: ConductorIndexMap
    sigma: np.ndarray
    mu: np.ndarray
    mu_tilde: float
    conductor: np.ndarray
    ibc_faces: np.ndarray           # (F, 3)
    ibc_owner: np.ndarray           # (F,) lowest adjacent tet


def _context(mesh: Mesh, mat: MaterialTable, cmap: ConductorIndexMap | None = None) -> _Context:
    conductor = mesh.region_mask(*mat.conductor_regions())
    if cmap is None:
        # an insulator-only mesh has no scalar potential: M12, M21, M22 are empty
        cmap = mat.conductor_map(mesh) if conductor.any() else ConductorIndexMap(
            np.full(mesh.n_nodes, -1, dtype=np.int64), np.zeros(0, dtype=np.int64))
    sigma = mat.tet_sigma(mesh)
    bad = np.flatnonzero(conductor & (sigma <= 0))
    if len(bad):
        raise ValueError(f"conductor tet {bad[0]} ({Region(mesh.tet_region[bad[0]]).name}) has sigma <= 0")
    faces = np.zeros((0, 3), dtype=np.int64)
    owner = np.zeros(0, dtype=np.int64)
    if mat.ibc:
        faces = mesh.faces_with_label(Boundary.GAMMA_P)
        owner = face_min_owner(mesh, faces)
    return _Context(mesh, mat, cmap, sigma, mat.tet_mu(mesh), mat.resolved_mu_tilde(mesh),
                    conductor, faces, owner)


def face_min_owner(mesh: Mesh, faces: np.ndarray) -> np.ndarray:
    """Lowest-index tet adjacent to each face."""
    topo = mesh.topology()
    n = mesh.n_nodes
    key = lambda f: (f[:, 0] * n + f[:, 1]) * n + f[:, 2]
    tk = key(topo.faces)
    fk = key(np.sort(faces, axis=1))
    pos = np.searchsorted(tk, fk)
    if len(fk) and (np.any(pos >= len(tk)) or np.any(tk[np.minimum(pos, len(tk) - 1)] != fk)):
        raise ValueError("labeled face is not a face of the mesh")
    own = topo.owners[pos]
    return np.where(own[:, 1] >= 0, np.minimum(own[:, 0], own[:, 1]), own[:, 0])


def _a_dofs(tets: np.ndarray) -> np.ndarray:
    return (3 * tets[..., :, None] + np.arange(3)).reshape(tets.shape[:-1] + (-1,))


def _triplets(rows, cols, vals):
    r = np.broadcast_to(rows[:, :, None], vals.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], vals.shape).ravel()
    return r, c, vals.ravel()


def _block_for(ctx: _Context, tets: np.ndarray, faces: np.ndarray, selector: str) -> SparseComplexBlock:
    mesh, mat = ctx.mesh, ctx.mat
    na, nv = 3 * mesh.n_nodes, ctx.cmap.size
    shape, space = {"11": ((na, na), "AA"), "12": ((na, nv), "AV"),
                    "21": ((nv, na), "VA"), "22": ((nv, nv), "VV"),
                    "rhs-mass": ((na, na), "AA")}[selector]
    if selector in ("12", "21", "22"):
        tets = tets[ctx.conductor[tets]]
    acc = sp.csr_matrix(shape, dtype=complex)
    for s in range(0, len(tets), _CHUNK):
        k = tets[s:s + _CHUNK]
        conn = mesh.tets[k]
        X = mesh.nodes[conn]
        if selector == "11":
            E = element_L11(X, ctx.mu[k], ctx.mu_tilde, ctx.sigma[k], mat.omega)
            r = c = _a_dofs(conn)
        elif selector == "rhs-mass":
            E = element_mass_vector(X) + 0j
            r = c = _a_dofs(conn)
        elif selector == "12":
            E = element_L12(X, ctx.sigma[k])
            r, c = _a_dofs(conn), ctx.cmap.forward[conn]
        elif selector == "21":
            E = element_L21(X, ctx.sigma[k])
            r, c = ctx.cmap.forward[conn], _a_dofs(conn)
        else:
            s_k = np.full(len(k), mat.sigma_eps) if mat.l22_sigma_eps else None
            E = element_L22(X, ctx.sigma[k], mat.omega, mat.delta_gauge, ctx.mu[k], s_k)
            r = c = ctx.cmap.forward[conn]
        rr, cc, vv = _triplets(r, c, E)
        acc = acc + sp.csr_matrix((vv, (rr, cc)), shape=shape)
    if len(faces) and selector in ("11", "12", "21", "22"):
        acc = acc + _ibc_block(ctx, faces, selector, shape)
    return SparseComplexBlock.from_sparse(acc, space)


def _ibc_block(ctx: _Context, faces: np.ndarray, selector: str, shape) -> sp.csr_matrix:
    mesh, mat = ctx.mesh, ctx.mat
    AA, AV, VA, VV = element_ibc(mesh.nodes[faces], mat.tsp_impedance(), mat.omega)
    vdof = ctx.cmap.forward[faces]
    has_v = np.all(vdof >= 0, axis=1)
    if selector == "11":
        r = c = _a_dofs(faces)
        E = AA
    else:
        # scalar-potential terms exist only where the whole triangle carries V dofs
        sel = has_v
        if not sel.any():
            return sp.csr_matrix(shape, dtype=complex)
        faces, vdof = faces[sel], vdof[sel]
        if selector == "12":
            r, c, E = _a_dofs(faces), vdof, AV[sel]
        elif selector == "21":
            r, c, E = vdof, _a_dofs(faces), VA[sel]
        else:
            r, c, E = vdof, vdof, VV[sel]
    rr, cc, vv = _triplets(r, c, E)
    return sp.csr_matrix((vv, (rr, cc)), shape=shape)


def assemble_block(mesh: Mesh, mat: MaterialTable, pmap: PartitionMap | None, part: int,
                   selector: str, ctx: _Context | None = None) -> SparseComplexBlock:
    """Contributions of the tets (and owned TSP faces) of one part."""
    if selector not in SELECTORS:
        raise ValueError(f"unknown block selector {selector!r}")
    ctx = ctx or _context(mesh, mat)
    if pmap is None:
        tets = np.arange(mesh.n_tets)
        faces = ctx.ibc_faces
    else:
        if len(pmap.part_of) != mesh.n_tets:
            raise ValueError("partition map does not match the mesh")
        tets = np.flatnonzero(pmap.part_of == part)
        faces = ctx.ibc_faces[pmap.part_of[ctx.ibc_owner] == part] if len(ctx.ibc_faces) else ctx.ibc_faces
    return _block_for(ctx, tets, faces, selector)


def assemble_system(mesh: Mesh, mat: MaterialTable, pmap: PartitionMap | None = None,
                    workers: int = 1) -> tuple[BlockSystem, dict]:
    """Assemble every part (concurrently), then merge the four blocks.

    Returns the merged system and timings ``{"assemble": s, "reduce": s}``.
    """
    ctx = _context(mesh, mat)
    n_parts = 1 if pmap is None else pmap.n_parts

    def work(p):
        return [assemble_block(mesh, mat, pmap, p, s, ctx) for s in ("11", "12", "21", "22")]

    t0 = time.perf_counter()
    if workers > 1 and n_parts > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            per_part = list(ex.map(work, range(n_parts)))
    else:
        per_part = [work(p) for p in range(n_parts)]
    t1 = time.perf_counter()
    merged = [reduce_blocks([pp[i] for pp in per_part]) for i in range(4)]
    t2 = time.perf_counter()
    system = BlockSystem(*merged, cmap=ctx.cmap)
    system.check()
    return system, {"assemble": t1 - t0, "reduce": t2 - t1}


# ------------------------------------------------------ boundary conditions

def pinned_dofs(mesh: Mesh) -> np.ndarray:
    """A-dofs fixed by the A.n = 0 condition on the cylinder.

    Top/bottom nodes pin the z component; lateral nodes pin x and y.
    """
    tb = np.unique(mesh.faces_with_label(Boundary.OUTER_TOP, Boundary.OUTER_BOTTOM))
    lat = np.unique(mesh.faces_with_label(Boundary.OUTER_LATERAL))
    if len(tb) == 0 and len(lat) == 0:
        raise ValueError("mesh has no labeled outer boundary")
    dofs = np.concatenate([3 * tb + 2, 3 * lat, 3 * lat + 1])
    return np.unique(dofs)


def pin(m11: SparseComplexBlock, dofs: np.ndarray, penalty: float) -> SparseComplexBlock:
    """Overwrite the diagonal at ``dofs`` with ``penalty`` (off-diagonals untouched)."""
    b = m11.canonicalize()
    mask = np.zeros(b.shape[0], dtype=bool)
    mask[dofs] = True
    on_diag = (b.rows == b.cols) & mask[b.rows]
    vals = b.vals.copy()
    vals[on_diag] = penalty
    missing = np.setdiff1d(dofs, b.rows[on_diag])
    rows = np.concatenate([b.rows, missing])
    cols = np.concatenate([b.cols, missing])
    vals = np.concatenate([vals, np.full(len(missing), penalty, dtype=complex)])
    return SparseComplexBlock(rows, cols, vals, b.shape, b.space).canonicalize()


def apply_essential_bc(system: BlockSystem, mesh: Mesh, bc_penalty: float) -> BlockSystem:
    dofs = pinned_dofs(mesh)
    rhs = None
    if system.rhs is not None:
        rhs = system.rhs.copy()
        rhs[dofs] = 0.0
    return replace(system, m11=pin(system.m11, dofs, bc_penalty), rhs=rhs, pinned=dofs)


# --------------------------------------------------------------- source term

@dataclass(frozen=True)
class CoilGeometry:
    inner_radius: float
    outer_radius: float
    height: float
    separation: float

    def center(self, coil: int, probe_z: float) -> float:
        return probe_z + (-0.5 if coil == 1 else 0.5) * self.separation


def tet_node_rz(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Radius and height of every tet vertex, each (T, 4)."""
    p = mesh.nodes[mesh.tets]
    return np.hypot(p[..., 0], p[..., 1]), p[..., 2]


def coil_support(mesh: Mesh, coil: int, probe_z: float | None = None,
                 geom: CoilGeometry | None = None,
                 rz: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Tets carrying the current of ``coil`` (1 or 2).

    With a probe position and coil geometry the support is every tet whose
    nodes all lie in the coil's annulus; otherwise the COIL_1/COIL_2 tags are used.
    ``rz`` may pass a precomputed ``tet_node_rz(mesh)`` when many supports are needed.
    """
    if coil not in (1, 2):
        raise ValueError("coil must be 1 or 2")
    if probe_z is None or geom is None:
        return np.flatnonzero(mesh.tet_region == (Region.COIL_1 if coil == 1 else Region.COIL_2))
    zc = geom.center(coil, probe_z)
    tol = 1e-9 * max(geom.outer_radius, geom.height)
    r, z = rz if rz is not None else tet_node_rz(mesh)
    inside = ((r >= geom.inner_radius - tol) & (r <= geom.outer_radius + tol)
              & (z >= zc - geom.height / 2 - tol) & (z <= zc + geom.height / 2 + tol))
    return np.flatnonzero(inside.all(axis=1))


def coil_current(points: np.ndarray) -> np.ndarray:
    """Unit azimuthal current density (-y, x, 0)/r."""
    r = np.hypot(points[:, 0], points[:, 1])
    if np.any(r == 0):
        raise ValueError("coil current is singular on the axis")
    return np.column_stack([-points[:, 1] / r, points[:, 0] / r, np.zeros(len(r))])


def assemble_rhs(mesh: Mesh, cmap: ConductorIndexMap, coil: int, probe_z: float | None = None,
                 geom: CoilGeometry | None = None, amplitude: float = 1.0) -> np.ndarray:
    """Source vector [J_e ; 0]: nodal interpolation of J_e times the P1 mass."""
    support = coil_support(mesh, coil, probe_z, geom)
    if len(support) == 0:
        raise ValueError(f"coil {coil} support is empty at this position")
    cond = np.isin(mesh.tet_region[support], [int(r) for r in CONDUCTOR_REGIONS])
    if cond.any():
        raise ValueError(f"coil {coil} support intersects a conductor (tet {support[cond][0]})")
    conn = mesh.tets[support]
    J = amplitude * coil_current(mesh.nodes[conn].reshape(-1, 3)).reshape(len(support), 12)
    local = np.einsum("kab,kb->ka", element_mass_vector(mesh.nodes[conn]), J)
    rhs = np.zeros(3 * mesh.n_nodes + cmap.size, dtype=complex)
    np.add.at(rhs, _a_dofs(conn).ravel(), local.ravel())
    return rhs
