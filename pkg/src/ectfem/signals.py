"""Electric field and coil impedance signals from potential solutions."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .mesh import CONDUCTOR_REGIONS, ConductorIndexMap, Mesh

log = logging.getLogger(__name__)


@dataclass
class PotentialSolution:
    A: np.ndarray               # (N, 3) complex nodal vector potential
    V: np.ndarray               # (Nc,) complex scalar potential on conductor nodes
    omega: float
    cmap: ConductorIndexMap
    residual: float = 0.0
    converged: bool = True
    iterations: int = 0

    def vector(self) -> np.ndarray:
        return np.concatenate([self.A.ravel(), self.V])


@dataclass
class SignalPoint:
    z: float
    delta_z: np.ndarray         # (2, 2) complex, [k, l] = coil k in the field of coil l
    z_fa: complex
    z_f3: complex
    failed: bool = False

    @classmethod
    def from_delta(cls, z: float, dz: np.ndarray) -> "SignalPoint":
        fa, f3 = signal_modes(dz)
        return cls(z, np.asarray(dz, dtype=complex), fa, f3)

    @classmethod
    def failure(cls, z: float) -> "SignalPoint":
        nan = complex(np.nan, np.nan)
        return cls(z, np.full((2, 2), nan), nan, nan, failed=True)


def skin_depth(omega: float, mu: float, sigma: float) -> float:
    if omega <= 0 or mu <= 0 or sigma <= 0:
        raise ValueError("omega, mu and sigma must all be positive")
    return math.sqrt(2.0 / (omega * mu * sigma))


def surface_impedance(omega: float, mu: float, sigma: float) -> complex:
    """(1 - i) / (delta * sigma) for the skin depth delta of the material."""
    return (1 - 1j) / (skin_depth(omega, mu, sigma) * sigma)


def _gradients(mesh: Mesh, tets: np.ndarray) -> np.ndarray:
    from .assembly import tet_gradients

    G, _ = tet_gradients(mesh.nodes[mesh.tets[tets]])
    return G


def conductor_tets(mesh: Mesh, cmap: ConductorIndexMap) -> np.ndarray:
    """Conductor-tagged tets whose four nodes all carry a scalar-potential dof."""
    mapped = np.all(cmap.forward[mesh.tets] >= 0, axis=1)
    return mesh.region_mask(*CONDUCTOR_REGIONS) & mapped


def electric_field(sol: PotentialSolution, mesh: Mesh, tets: np.ndarray | None = None) -> np.ndarray:
    """Per-tet E = i*omega*A(centroid) + grad V (grad V only on conductor tets)."""
    tets = np.arange(mesh.n_tets) if tets is None else np.asarray(tets)
    conn = mesh.tets[tets]
    E = 1j * sol.omega * sol.A[conn].mean(axis=1)
    cond = conductor_tets(mesh, sol.cmap)[tets]
    if cond.any():
        G = _gradients(mesh, tets[cond])
        Vn = sol.V[sol.cmap.forward[conn[cond]]]
        E[cond] += np.einsum("kai,ka->ki", G, Vn)
    return E


def tet_curl(sol: PotentialSolution, mesh: Mesh, tets: np.ndarray | None = None) -> np.ndarray:
    """Per-tet constant curl A = sum_a grad(lambda_a) x A_a."""
    tets = np.arange(mesh.n_tets) if tets is None else np.asarray(tets)
    G = _gradients(mesh, tets)
    return np.cross(G, sol.A[mesh.tets[tets]]).sum(axis=1)


def delta_impedance(sol_k: PotentialSolution, ref_l: PotentialSolution, mesh: Mesh,
                    defect_tets: np.ndarray, mu_eps: float, mu_d: float, sigma, sigma_eps: float,
                    omega: float, conjugate: bool = False) -> complex:
    """Impedance variation of coil k in the reference field of coil l.

    (1/(i w)) (mu_e - mu_d)/(mu_d mu_e) sum |K| curl A_k . curl A_l^e
      + sum |K| (sigma_K - sigma_e) E_k . E_l^e     over defect tets K,

    with per-tet constant curls and fields. The pairing is bilinear unless
    ``conjugate`` is set, which conjugates the reference field.
    """
    defect_tets = np.asarray(defect_tets, dtype=np.int64)
    if len(defect_tets) == 0:
        log.warning("defect region is empty; impedance variation is zero")
        return 0j
    vol = mesh.volumes()[defect_tets]
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), vol.shape)
    mag = (mu_eps - mu_d) / (mu_d * mu_eps)
    cond = sig - sigma_eps
    total = 0j
    if mag != 0:
        ck = tet_curl(sol_k, mesh, defect_tets)
        cl = tet_curl(ref_l, mesh, defect_tets)
        if conjugate:
            cl = cl.conj()
        total += mag / (1j * omega) * np.sum(vol * np.einsum("ki,ki->k", ck, cl))
    if np.any(cond != 0):
        ek = electric_field(sol_k, mesh, defect_tets)
        el = electric_field(ref_l, mesh, defect_tets)
        if conjugate:
            el = el.conj()
        total += np.sum(cond * vol * np.einsum("ki,ki->k", ek, el))
    return complex(total)


def signal_modes(dz: np.ndarray) -> tuple[complex, complex]:
    """Absolute and differential signals (Z_FA, Z_F3) of a 2x2 variation matrix."""
    dz = np.asarray(dz)
    z_fa = 0.5j * (dz[0, 0] + dz[0, 1])
    z_f3 = 0.5j * (dz[0, 0] - dz[1, 1])
    return complex(z_fa), complex(z_f3)
