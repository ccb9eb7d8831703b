"""Tetrahedral meshes with material regions and labeled boundary faces.

Meshes are read from and written to a strict subset of the Gmsh ASCII 2.2
format: one ``$Nodes`` block, one ``$Elements`` block holding 4-node
tetrahedra (type 4) and 3-node triangles (type 2), with the first element
tag interpreted as the physical tag.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Mapping

import numpy as np


class Region(IntEnum):
    TUBE = 1
    TSP = 2
    DEFECT = 3
    COIL_1 = 4
    COIL_2 = 5
    VACUUM = 6


class Boundary(IntEnum):
    OUTER_LATERAL = 11
    OUTER_TOP = 12
    OUTER_BOTTOM = 13
    GAMMA = 14
    GAMMA_P = 15


CONDUCTOR_REGIONS = (Region.TUBE, Region.TSP, Region.DEFECT)
OUTER_LABELS = (Boundary.OUTER_LATERAL, Boundary.OUTER_TOP, Boundary.OUTER_BOTTOM)

# physical tag -> Region/Boundary used when no mapping is supplied
DEFAULT_TAG_MAP: dict[int, Region | Boundary] = {
    int(t): t for t in (*Region, *Boundary)
}

# local faces of a tet, each opposite to the vertex with the same index
TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


class MeshError(ValueError):
    """Raised when a mesh cannot be read or violates a structural invariant."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Mesh:
    nodes: np.ndarray           # (N, 3) float, meters
    tets: np.ndarray            # (M, 4) int
    tet_region: np.ndarray      # (M,) int, Region values
    faces: np.ndarray           # (F, 3) int, labeled boundary/interface faces
    face_label: np.ndarray      # (F,) int, Boundary values
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def volumes(self) -> np.ndarray:
        if "volumes" not in self._cache:
            self._cache["volumes"] = signed_volumes(self.nodes, self.tets)
        return self._cache["volumes"]

    def centroids(self) -> np.ndarray:
        return self.nodes[self.tets].mean(axis=1)

    def topology(self) -> "FaceTopology":
        if "topology" not in self._cache:
            self._cache["topology"] = face_topology(self.tets)
        return self._cache["topology"]

    def region_mask(self, *regions: Region) -> np.ndarray:
        return np.isin(self.tet_region, [int(r) for r in regions])

    def faces_with_label(self, *labels: Boundary) -> np.ndarray:
        return self.faces[np.isin(self.face_label, [int(b) for b in labels])]


@dataclass(frozen=True)
class FaceTopology:
    """Unique faces of a tet mesh and the (at most two) tets sharing each."""

    faces: np.ndarray       # (F, 3) sorted node triples
    owners: np.ndarray      # (F, 2) tet indices, second is -1 for exterior faces
    counts: np.ndarray      # (F,) how many tets reference the face
    tet_faces: np.ndarray   # (M, 4) face index of each local face

    @property
    def interior(self) -> np.ndarray:
        return self.counts == 2

    def dual_graph(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR adjacency (indptr, indices) of the face-adjacency dual graph.

        Neighbor lists are sorted ascending.
        """
        pairs = self.owners[self.counts == 2]
        m = len(self.tet_faces)
        src = np.concatenate([pairs[:, 0], pairs[:, 1]])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(m + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return np.cumsum(indptr), dst


@dataclass(frozen=True)
class ConductorIndexMap:
    forward: np.ndarray     # (N,) global node -> conductor dof, -1 if absent
    inverse: np.ndarray     # (Nc,) conductor dof -> global node

    @property
    def size(self) -> int:
        return len(self.inverse)


def signed_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = nodes[tets]
    d = p[:, 1:] - p[:, :1]
    return np.linalg.det(d) / 6.0


def sort_rows(a: np.ndarray) -> np.ndarray:
    return np.sort(a, axis=1)


def face_topology(tets: np.ndarray) -> FaceTopology:
    m = len(tets)
    local = sort_rows(tets[:, TET_FACES].reshape(-1, 3))
    uniq, inv, counts = np.unique(local, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    owner_tet = np.repeat(np.arange(m), 4)
    order = np.argsort(inv, kind="stable")
    owners = np.full((len(uniq), 2), -1, dtype=np.int64)
    first = np.ones(len(order), dtype=bool)
    first[1:] = inv[order][1:] != inv[order][:-1]
    owners[inv[order][first], 0] = owner_tet[order][first]
    second = ~first
    # a face referenced by three or more tets keeps only its first two owners
    owners[inv[order][second], 1] = owner_tet[order][second]
    return FaceTopology(uniq, owners, counts, inv.reshape(m, 4))


def _face_keys(faces: np.ndarray) -> np.ndarray:
    f = sort_rows(np.asarray(faces, dtype=np.int64))
    n = int(f.max()) + 1 if f.size else 1
    return (f[:, 0] * n + f[:, 1]) * n + f[:, 2]


def classify_faces(nodes: np.ndarray, tets: np.ndarray, tet_region: np.ndarray,
                   topo: FaceTopology | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Recompute boundary labels from region adjacency and geometry.

    Exterior faces get OUTER_* (precedence over interface labels): TOP/BOTTOM
    when the face lies in the max/min z plane, LATERAL otherwise. Interior
    faces separating a TSP tet from a non-TSP tet are GAMMA_P; remaining
    conductor/non-conductor faces are GAMMA.
    """
    topo = topo or face_topology(tets)
    cond = np.isin(tet_region, [int(r) for r in CONDUCTOR_REGIONS])
    tsp = tet_region == Region.TSP
    faces_out, labels_out = [], []

    ext = np.flatnonzero(topo.counts == 1)
    if len(ext):
        fz = nodes[topo.faces[ext], 2]
        zmin, zmax = nodes[:, 2].min(), nodes[:, 2].max()
        tol = 1e-9 * max(1.0, zmax - zmin)
        lab = np.full(len(ext), int(Boundary.OUTER_LATERAL))
        lab[np.all(np.abs(fz - zmax) <= tol, axis=1)] = Boundary.OUTER_TOP
        lab[np.all(np.abs(fz - zmin) <= tol, axis=1)] = Boundary.OUTER_BOTTOM
        faces_out.append(topo.faces[ext])
        labels_out.append(lab)

    inner = np.flatnonzero(topo.counts == 2)
    a, b = topo.owners[inner, 0], topo.owners[inner, 1]
    is_gp = tsp[a] != tsp[b]
    is_g = (cond[a] != cond[b]) & ~is_gp
    faces_out += [topo.faces[inner[is_gp]], topo.faces[inner[is_g]]]
    labels_out += [np.full(is_gp.sum(), int(Boundary.GAMMA_P)),
                   np.full(is_g.sum(), int(Boundary.GAMMA))]
    faces = np.concatenate(faces_out) if faces_out else np.zeros((0, 3), dtype=np.int64)
    labels = np.concatenate(labels_out) if labels_out else np.zeros(0, dtype=np.int64)
    return faces.astype(np.int64), labels.astype(np.int64)


def build_mesh(nodes, tets, tet_region, faces=None, face_label=None) -> Mesh:
    """Assemble a Mesh, canonicalizing orientation and boundary labels.

    Negatively oriented tets are flipped by swapping two vertices. When no
    labeled faces are given they are recomputed from region adjacency.
    """
    nodes = np.ascontiguousarray(nodes, dtype=float)
    tets = np.array(tets, dtype=np.int64)
    tet_region = np.asarray(tet_region, dtype=np.int64)
    vol = signed_volumes(nodes, tets)
    scale = np.abs(vol).max() if len(vol) else 1.0
    degenerate = np.flatnonzero(np.abs(vol) <= 1e-12 * scale)
    if len(degenerate):
        raise MeshError(f"degenerate tetrahedron {degenerate[0]} (zero volume)")
    neg = vol < 0
    tets[neg] = tets[neg][:, [1, 0, 2, 3]]
    if faces is None or len(faces) == 0:
        faces, face_label = classify_faces(nodes, tets, tet_region)
    mesh = Mesh(nodes, tets, tet_region,
                np.asarray(faces, dtype=np.int64).reshape(-1, 3),
                np.asarray(face_label, dtype=np.int64))
    return mesh


def validate(mesh: Mesh) -> list[str]:
    """Return a list of violated mesh invariants; empty means valid."""
    report = []
    vol = mesh.volumes()
    for k in np.flatnonzero(vol <= 0):
        report.append(f"tet {k}: non-positive signed volume {vol[k]:.3e}")
    known_regions = [int(r) for r in Region]
    for k in np.flatnonzero(~np.isin(mesh.tet_region, known_regions)):
        report.append(f"tet {k}: unknown region tag {mesh.tet_region[k]}")
    known_labels = [int(b) for b in Boundary]
    for k in np.flatnonzero(~np.isin(mesh.face_label, known_labels)):
        report.append(f"face {k}: unknown boundary label {mesh.face_label[k]}")

    topo = mesh.topology()
    for f in np.flatnonzero(topo.counts > 2):
        report.append(f"face {tuple(topo.faces[f])}: shared by {topo.counts[f]} tets (non-conforming)")

    keys = _face_keys(mesh.faces) if len(mesh.faces) else np.zeros(0, dtype=np.int64)
    uk, cnt = np.unique(keys, return_counts=True)
    for k in uk[cnt > 1]:
        report.append(f"boundary face key {k}: labeled more than once")

    exp_faces, exp_labels = classify_faces(mesh.nodes, mesh.tets, mesh.tet_region, topo)
    n = max(int(mesh.tets.max()) + 1 if mesh.n_tets else 1, mesh.n_nodes)

    def keyed(f):
        f = sort_rows(np.asarray(f, dtype=np.int64))
        return (f[:, 0] * n + f[:, 1]) * n + f[:, 2]

    def name(lab):
        return Boundary(lab).name if lab in known_labels else str(lab)

    expected = dict(zip(keyed(exp_faces).tolist(), exp_labels.tolist())) if len(exp_faces) else {}
    actual_keys = keyed(mesh.faces).tolist() if len(mesh.faces) else []
    outer = {int(b) for b in OUTER_LABELS}
    for key, face, lab in zip(actual_keys, sort_rows(mesh.faces), mesh.face_label.tolist()):
        want = expected.get(key)
        if want is None:
            report.append(f"face {tuple(face)}: {name(lab)} on a face that is neither "
                          "exterior nor a material interface (misclassified)")
        elif want in outer and lab in outer:
            continue
        elif want != lab:
            report.append(f"face {tuple(face)}: labeled {name(lab)}, expected {name(want)} (misclassified)")
    present = set(actual_keys)
    for (key, want), face in zip(expected.items(), sort_rows(exp_faces)):
        if key not in present:
            report.append(f"face {tuple(face)}: missing {name(want)} label")
    return report


def conductor_map(mesh: Mesh, exclude: tuple[Region, ...] = ()) -> ConductorIndexMap:
    regions = [r for r in CONDUCTOR_REGIONS if r not in exclude]
    mask = mesh.region_mask(*regions)
    if not mask.any():
        raise MeshError("mesh has no conductor region; the scalar potential space is empty")
    nodes = np.unique(mesh.tets[mask])
    forward = np.full(mesh.n_nodes, -1, dtype=np.int64)
    forward[nodes] = np.arange(len(nodes))
    return ConductorIndexMap(forward, nodes)


def connected_components(n: int, indptr: np.ndarray, indices: np.ndarray,
                         mask: np.ndarray | None = None) -> np.ndarray:
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components as cc

    g = csr_matrix((np.ones(len(indices)), indices, indptr), shape=(n, n))
    if mask is not None:
        keep = np.flatnonzero(mask)
        g = g[keep][:, keep]
    _, labels = cc(g, directed=False)
    return labels


# --------------------------------------------------------------------- I/O

def _resolve_tag(tag_map: Mapping[int, Region | Boundary], tag: int, line: int):
    if tag not in tag_map:
        raise MeshError(f"unknown physical tag {tag}", line)
    return tag_map[tag]


def load_mesh(path: str | Path,
              tag_map: Mapping[int, Region | Boundary] | None = None) -> Mesh:
    tag_map = DEFAULT_TAG_MAP if tag_map is None else tag_map
    lines = Path(path).read_text().splitlines()
    i = 0
    node_ids: dict[int, int] = {}
    coords: list[list[float]] = []
    tets, regions, tris, labels = [], [], [], []
    seen_nodes = seen_elems = False

    def expect_int(lineno):
        try:
            return int(lines[lineno].split()[0])
        except (IndexError, ValueError):
            raise MeshError("expected an integer count", lineno + 1) from None

    while i < len(lines):
        s = lines[i].strip()
        if s == "$MeshFormat":
            parts = lines[i + 1].split() if i + 1 < len(lines) else []
            if not parts or not parts[0].startswith("2"):
                raise MeshError("only ASCII format 2.x is supported", i + 2)
            if len(parts) > 1 and parts[1] != "0":
                raise MeshError("binary mesh files are not supported", i + 2)
            i += 3
        elif s == "$Nodes":
            count = expect_int(i + 1)
            for j in range(count):
                ln = i + 2 + j
                parts = lines[ln].split() if ln < len(lines) else []
                if len(parts) != 4:
                    raise MeshError("node line must hold 'id x y z'", ln + 1)
                try:
                    node_ids[int(parts[0])] = len(coords)
                    coords.append([float(v) for v in parts[1:]])
                except ValueError:
                    raise MeshError("malformed node line", ln + 1) from None
            end = i + 2 + count
            if end >= len(lines) or lines[end].strip() != "$EndNodes":
                raise MeshError("missing $EndNodes", end + 1)
            seen_nodes = True
            i = end + 1
        elif s == "$Elements":
            count = expect_int(i + 1)
            for j in range(count):
                ln = i + 2 + j
                try:
                    vals = [int(v) for v in lines[ln].split()]
                except (IndexError, ValueError):
                    raise MeshError("malformed element line", ln + 1) from None
                if len(vals) < 3:
                    raise MeshError("element line too short", ln + 1)
                etype, ntags = vals[1], vals[2]
                if ntags < 1:
                    raise MeshError("element without physical tag", ln + 1)
                phys = vals[3]
                conn = vals[3 + ntags:]
                try:
                    conn = [node_ids[v] for v in conn]
                except KeyError as exc:
                    raise MeshError(f"element references unknown node {exc.args[0]}", ln + 1) from None
                if etype == 4:
                    if len(conn) != 4:
                        raise MeshError("tetrahedron needs 4 nodes", ln + 1)
                    tag = _resolve_tag(tag_map, phys, ln + 1)
                    if not isinstance(tag, Region):
                        raise MeshError(f"physical tag {phys} is not a region", ln + 1)
                    tets.append(conn)
                    regions.append(int(tag))
                elif etype == 2:
                    if len(conn) != 3:
                        raise MeshError("triangle needs 3 nodes", ln + 1)
                    tag = _resolve_tag(tag_map, phys, ln + 1)
                    if not isinstance(tag, Boundary):
                        raise MeshError(f"physical tag {phys} is not a boundary label", ln + 1)
                    tris.append(conn)
                    labels.append(int(tag))
                elif etype == 15:
                    continue  # points are ignored
                else:
                    raise MeshError(f"unsupported element type {etype}", ln + 1)
            end = i + 2 + count
            if end >= len(lines) or lines[end].strip() != "$EndElements":
                raise MeshError("missing $EndElements", end + 1)
            seen_elems = True
            i = end + 1
        elif s.startswith("$") and not s.startswith("$End"):
            # skip unsupported-but-harmless sections such as $PhysicalNames
            name = s[1:]
            while i < len(lines) and lines[i].strip() != f"$End{name}":
                i += 1
            i += 1
        elif s == "":
            i += 1
        else:
            raise MeshError(f"unexpected content {s[:30]!r}", i + 1)

    if not (seen_nodes and seen_elems):
        raise MeshError("file needs both $Nodes and $Elements sections")
    if not tets:
        raise MeshError("file contains no tetrahedra")

    mesh = build_mesh(np.array(coords), np.array(tets), np.array(regions),
                      np.array(tris).reshape(-1, 3) if tris else None,
                      np.array(labels) if labels else None)
    topo = mesh.topology()
    bad = np.flatnonzero(topo.counts > 2)
    if len(bad):
        raise MeshError(f"non-conforming mesh: face {tuple(topo.faces[bad[0]])} "
                        f"shared by {topo.counts[bad[0]]} tets")
    if tris:
        problems = [p for p in validate(mesh) if p.startswith("face")]
        if problems:
            raise MeshError(f"boundary labels disagree with region adjacency: {problems[0]}")
    return mesh


def write_mesh(mesh: Mesh, path: str | Path) -> None:
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.n_nodes)]
    out += [f"{i + 1} {x:.17g} {y:.17g} {z:.17g}" for i, (x, y, z) in enumerate(mesh.nodes)]
    out += ["$EndNodes", "$Elements", str(len(mesh.faces) + mesh.n_tets)]
    eid = 1
    for f, lab in zip(mesh.faces, mesh.face_label):
        out.append(f"{eid} 2 2 {lab} {lab} {f[0] + 1} {f[1] + 1} {f[2] + 1}")
        eid += 1
    for t, reg in zip(mesh.tets, mesh.tet_region):
        out.append(f"{eid} 4 2 {reg} {reg} {t[0] + 1} {t[1] + 1} {t[2] + 1} {t[3] + 1}")
        eid += 1
    out.append("$EndElements")
    Path(path).write_text("\n".join(out) + "\n")


def canonical_connectivity(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Orientation- and order-independent element lists for comparisons."""
    t = np.column_stack([np.sort(mesh.tets, axis=1), mesh.tet_region])
    f = np.column_stack([np.sort(mesh.faces, axis=1), mesh.face_label])
    t = t[np.lexsort(t.T[::-1])]
    f = f[np.lexsort(f.T[::-1])] if len(f) else f
    return t, f
