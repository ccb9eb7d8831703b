"""Structured tetrahedral mesh generators.

``generate_box_mesh`` splits an n^3 grid of cubes into 6 tets each (Kuhn
split). ``generate_tube_mesh`` builds a polygonal disk cross-section made of
concentric rings, extrudes it into prism layers and splits every prism into
three tets. Ring radii and layer heights are placed on every material
interface and coil edge, so region tags are exact and coil supports at all
probe positions are unions of whole elements.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, MeshError, Region, build_mesh


def generate_box_mesh(n: int, lower=(0.0, 0.0, 0.0), upper=(1.0, 1.0, 1.0),
                      region: Region = Region.VACUUM) -> Mesh:
    if n < 1:
        raise MeshError("box resolution must be >= 1")
    axes = [np.linspace(lo, hi, n + 1) for lo, hi in zip(lower, upper)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def nid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    i, j, k = (a.ravel() for a in np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij"))
    corners = np.column_stack([nid(i + (c >> 2 & 1), j + (c >> 1 & 1), k + (c & 1)) for c in range(8)])
    # Kuhn split: every tet contains the main diagonal 0 -> 7 of its cube
    paths = [(4, 6), (4, 5), (2, 6), (2, 3), (1, 5), (1, 3)]
    tets = np.concatenate([corners[:, [0, a, b, 7]] for a, b in paths])
    return build_mesh(nodes, tets, np.full(len(tets), int(region)))


@dataclass
class TSPSpec:
    z_min: float
    z_max: float
    inner_radius: float
    outer_radius: float


@dataclass
class DefectSpec:
    z_min: float
    z_max: float
    inner_radius: float
    outer_radius: float
    angle_start: float = 0.0      # degrees
    angle_extent: float = 360.0   # degrees


@dataclass
class TubeGeometry:
    tube_inner_radius: float = 8.5e-3
    tube_outer_radius: float = 9.5e-3
    enclosure_radius: float = 20e-3
    z_min: float = -30e-3
    z_max: float = 30e-3
    coil_inner_radius: float = 6e-3
    coil_outer_radius: float = 7.5e-3
    coil_height: float = 2e-3
    coil_separation: float = 3e-3          # center-to-center
    probe_positions: list[float] = field(default_factory=lambda: [0.0])
    tube_z_min: float | None = None         # None: tube reaches the outer boundary
    tube_z_max: float | None = None
    tsp: TSPSpec | None = None
    defect: DefectSpec | None = None
    resolution: int = 4
    angular_segments: int | None = None
    radial_spacing: float | None = None
    axial_spacing: float | None = None
    mirror_z: float | None = None           # plane about which the tet split is mirrored

    def coil_center(self, coil: int, probe_z: float) -> float:
        """Axial center of coil 1 (lower) or coil 2 (upper) for a probe at probe_z."""
        return probe_z + (-0.5 if coil == 1 else 0.5) * self.coil_separation

    def check(self) -> None:
        if self.resolution < 1:
            raise MeshError("resolution must be >= 1")
        radii = [self.coil_inner_radius, self.coil_outer_radius,
                 self.tube_inner_radius, self.tube_outer_radius]
        if self.tsp is not None:
            radii += [self.tsp.inner_radius, self.tsp.outer_radius]
        positive = radii + [self.enclosure_radius, self.coil_height, self.coil_separation,
                            self.z_max - self.z_min]
        if min(positive) <= 0:
            raise MeshError("geometry lengths must be positive")
        if not (self.coil_inner_radius < self.coil_outer_radius <= self.tube_inner_radius
                < self.tube_outer_radius < self.enclosure_radius):
            raise MeshError("radii must satisfy coil_in < coil_out <= tube_in < tube_out < enclosure")
        if self.tsp is not None:
            t = self.tsp
            if not (self.tube_outer_radius <= t.inner_radius < t.outer_radius <= self.enclosure_radius):
                raise MeshError("TSP radii must lie outside the tube and inside the enclosure")
            if not (self.z_min <= t.z_min < t.z_max <= self.z_max):
                raise MeshError("TSP z-extent must be ordered and inside the domain")
        if self.defect is not None:
            d = self.defect
            if not (0 < d.inner_radius < d.outer_radius <= self.enclosure_radius):
                raise MeshError("defect radii must be ordered")
            if not (self.z_min <= d.z_min < d.z_max <= self.z_max):
                raise MeshError("defect z-extent must be ordered and inside the domain")
            if d.inner_radius < self.coil_outer_radius + 0.0 and d.outer_radius > self.coil_inner_radius:
                raise MeshError("defect must not overlap the coil track")
        tz0 = self.z_min if self.tube_z_min is None else self.tube_z_min
        tz1 = self.z_max if self.tube_z_max is None else self.tube_z_max
        if not (self.z_min <= tz0 < tz1 <= self.z_max):
            raise MeshError("tube z-extent must be ordered and inside the domain")
        half = 0.5 * self.coil_separation + 0.5 * self.coil_height
        for z in self.probe_positions:
            if z - half < self.z_min or z + half > self.z_max:
                raise MeshError(f"coils of probe position {z} leave the domain")
        if self.coil_separation < self.coil_height:
            raise MeshError("coils overlap: separation must be >= coil height")


def _fill(breaks: list[float], spacing: float) -> np.ndarray:
    pts = np.unique(np.round(np.asarray(breaks, dtype=float), 15))
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        m = max(1, int(math.ceil((b - a) / spacing - 1e-9)))
        out.append(a + (b - a) * np.arange(1, m + 1) / m)
    return np.concatenate(out)


def _radial_breaks(g: TubeGeometry) -> list[float]:
    r = [g.coil_inner_radius, g.coil_outer_radius, g.tube_inner_radius,
         g.tube_outer_radius, g.enclosure_radius]
    if g.tsp is not None:
        r += [g.tsp.inner_radius, g.tsp.outer_radius]
    if g.defect is not None:
        r += [g.defect.inner_radius, g.defect.outer_radius]
    return r


def _axial_breaks(g: TubeGeometry) -> list[float]:
    z = [g.z_min, g.z_max]
    if g.tube_z_min is not None:
        z.append(g.tube_z_min)
    if g.tube_z_max is not None:
        z.append(g.tube_z_max)
    if g.tsp is not None:
        z += [g.tsp.z_min, g.tsp.z_max]
    if g.defect is not None:
        z += [g.defect.z_min, g.defect.z_max]
    h = 0.5 * g.coil_height
    for p in g.probe_positions:
        for c in (1, 2):
            zc = g.coil_center(c, p)
            z += [zc - h, zc + h]
    # a layer boundary on the mirror plane keeps the tet split symmetric
    z.append(0.5 * (g.z_min + g.z_max) if g.mirror_z is None else g.mirror_z)
    return [v for v in z if g.z_min <= v <= g.z_max]


def _disk(radii: np.ndarray, nseg: int):
    """Concentric-ring triangulation of a disk.

    Returns 2D points, triangles (each listed counter-clockwise), the ring band
    index of every triangle (0 = central fan) and its mid-angle.
    """
    theta = 2 * np.pi * np.arange(nseg) / nseg
    pts = [np.zeros((1, 2))]
    for r in radii:
        pts.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
    pts = np.concatenate(pts)

    def ring(j, k):
        return 1 + j * nseg + (k % nseg)

    k = np.arange(nseg)
    tris = [np.column_stack([np.zeros(nseg, dtype=int), ring(0, k), ring(0, k + 1)])]
    bands = [np.zeros(nseg, dtype=int)]
    angles = [theta + np.pi / nseg]
    for j in range(len(radii) - 1):
        a, b = ring(j, k), ring(j, k + 1)
        c, d = ring(j + 1, k + 1), ring(j + 1, k)
        tris += [np.column_stack([a, b, c]), np.column_stack([a, c, d])]
        bands += [np.full(nseg, j + 1)] * 2
        angles += [theta + np.pi / nseg] * 2
    return pts, np.concatenate(tris), np.concatenate(bands), np.concatenate(angles)


def _split_prisms(tri: np.ndarray, lower: np.ndarray, upper: np.ndarray, mirrored: np.ndarray):
    """Split prisms into 3 tets each with a conforming diagonal rule.

    Vertices are sorted by 2D index; every quad diagonal starts at the lower
    (or, for mirrored layers, upper) copy of the smaller-index vertex, so
    prisms sharing a quad within a layer split it identically.
    """
    s = np.sort(tri, axis=1)
    a0, b0, c0 = (lower[:, None] + s[None, :, i] for i in range(3))
    a1, b1, c1 = (upper[:, None] + s[None, :, i] for i in range(3))
    lo = np.stack([np.stack([a0, b0, c0, c1], -1), np.stack([a0, b0, b1, c1], -1),
                   np.stack([a0, a1, b1, c1], -1)], axis=2)
    hi = np.stack([np.stack([a1, b1, c1, c0], -1), np.stack([a1, b1, b0, c0], -1),
                   np.stack([a1, a0, b0, c0], -1)], axis=2)
    return np.where(mirrored[:, None, None, None], hi, lo)  # (L, T, 3, 4)


def generate_tube_mesh(g: TubeGeometry) -> Mesh:
    g.check()
    nseg = g.angular_segments or max(8, 4 * g.resolution)
    dr = g.radial_spacing or g.enclosure_radius / max(2, g.resolution)
    dz = g.axial_spacing or (g.z_max - g.z_min) / max(2, 2 * g.resolution)
    radii = _fill([0.0] + _radial_breaks(g), dr)[1:]
    zs = _fill(_axial_breaks(g), dz)

    pts, tri, band, ang = _disk(radii, nseg)
    n2 = len(pts)
    nodes = np.column_stack([np.tile(pts, (len(zs), 1)), np.repeat(zs, n2)])

    nl = len(zs) - 1
    zmid = 0.5 * (zs[:-1] + zs[1:])
    mirror = 0.5 * (g.z_min + g.z_max) if g.mirror_z is None else g.mirror_z
    mirrored = zmid > mirror
    layer_off = np.arange(nl) * n2
    tets = _split_prisms(tri, layer_off, layer_off + n2, mirrored).reshape(-1, 4)

    # per-tet lookups: layer -> z mid, triangle -> radial band and angle
    r_in = np.concatenate([[0.0], radii])[band]
    r_out = radii[band]
    rmid = np.broadcast_to(0.5 * (r_in + r_out)[None, :, None], (nl, len(tri), 3)).ravel()
    amid = np.broadcast_to(ang[None, :, None], (nl, len(tri), 3)).ravel()
    zt = np.broadcast_to(zmid[:, None, None], (nl, len(tri), 3)).ravel()

    region = np.full(len(tets), int(Region.VACUUM))
    tz0 = g.z_min if g.tube_z_min is None else g.tube_z_min
    tz1 = g.z_max if g.tube_z_max is None else g.tube_z_max
    tube = (rmid > g.tube_inner_radius) & (rmid < g.tube_outer_radius) & (zt > tz0) & (zt < tz1)
    region[tube] = Region.TUBE
    if g.tsp is not None:
        t = g.tsp
        sel = (rmid > t.inner_radius) & (rmid < t.outer_radius) & (zt > t.z_min) & (zt < t.z_max)
        region[sel] = Region.TSP
    if g.defect is not None:
        d = g.defect
        sel = (rmid > d.inner_radius) & (rmid < d.outer_radius) & (zt > d.z_min) & (zt < d.z_max)
        if d.angle_extent < 360.0:
            rel = np.mod(np.degrees(amid) - d.angle_start, 360.0)
            sel &= rel < d.angle_extent
        region[sel] = Region.DEFECT
    h = 0.5 * g.coil_height
    coil_band = (rmid > g.coil_inner_radius) & (rmid < g.coil_outer_radius)
    for c, tag in ((1, Region.COIL_1), (2, Region.COIL_2)):
        zc = g.coil_center(c, g.probe_positions[0])
        sel = coil_band & (zt > zc - h) & (zt < zc + h) & (region == Region.VACUUM)
        region[sel] = tag
    return build_mesh(nodes, tets, region)


def annulus_volume(r_in: float, r_out: float, length: float) -> float:
    return math.pi * (r_out ** 2 - r_in ** 2) * length
