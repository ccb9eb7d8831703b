"""Factor-once direct solver and a preconditioned Krylov fallback.

The direct path orders the node graph (all dofs of a node stay together)
with whichever of a geometric nested dissection and reverse Cuthill-McKee
gives the smaller symbolic factor, and hands the permuted matrix to SuperLU
with diagonal pivoting, which keeps the symmetric fill pattern of the
ordering. Matrices without geometry fall back to SuperLU's COLAMD with
partial pivoting.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .assembly import BlockSystem
from .mesh import ConductorIndexMap, Mesh
from .signals import PotentialSolution

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
PIVOT_TOL = 1e-14


class SolverError(RuntimeError):
    pass


class SingularMatrixError(SolverError):
    def __init__(self, dof: int, n_a: int | None = None):
        kind = ""
        if n_a is not None:
            kind = " (A dof)" if dof < n_a else f" (V dof {dof - n_a})"
        super().__init__(f"matrix is numerically singular at dof {dof}{kind}")
        self.dof = dof


def build_global(system: BlockSystem) -> sp.csc_matrix:
    """The 2x2 block matrix [[M11, M12], [M21, M22]] in canonical CSC form."""
    system.check()
    if system.n_v == 0:
        m = system.m11.to_csr().tocsc()
    else:
        m = sp.bmat([[system.m11.to_csr(), system.m12.to_csr()],
                     [system.m21.to_csr(), system.m22.to_csr()]], format="csc")
    m.sum_duplicates()
    m.sort_indices()
    return m


def node_graph(mesh: Mesh) -> sp.csr_matrix:
    r = np.repeat(mesh.tets, 4, axis=1).ravel()
    c = np.tile(mesh.tets, (1, 4)).ravel()
    g = sp.csr_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(mesh.n_nodes,) * 2)
    g.sum_duplicates()
    return g


def _dissect(adj: sp.csr_matrix, coords: np.ndarray, nodes: np.ndarray, leaf: int,
             out: list[np.ndarray]) -> None:
    n = adj.shape[0]
    stack = [(nodes, False)]
    # explicit stack; separators are emitted after both halves (post-order)
    while stack:
        item, is_sep = stack.pop()
        if is_sep or len(item) <= leaf:
            out.append(item)
            continue
        c = coords[item]
        best = None
        for axis in range(3):
            left = c[:, axis] <= np.median(c[:, axis])
            if left.all() or not left.any():
                continue
            right_mask = np.zeros(n, dtype=bool)
            right_mask[item[~left]] = True
            lnodes = item[left]
            sub = adj[lnodes]
            row = np.repeat(np.arange(len(lnodes)), np.diff(sub.indptr))
            touches = np.zeros(len(lnodes), dtype=bool)
            touches[row[right_mask[sub.indices]]] = True
            size = int(touches.sum())
            if best is None or size < best[0]:
                best = (size, left, lnodes, touches)
        if best is None:
            out.append(item)
            continue
        _, left, lnodes, touches = best
        # pushed in reverse: left half, right half, then separator
        stack.append((lnodes[touches], True))
        stack.append((item[~left], False))
        stack.append((lnodes[~touches], False))


def nested_dissection_nodes(mesh: Mesh, leaf: int = 16) -> np.ndarray:
    """Node ordering from recursive coordinate bisection.

    Each step splits the current node set at a coordinate median, trying all
    three axes and keeping the smallest separator (left nodes adjacent to the
    right half). Separators are numbered after both halves.
    """
    parts: list[np.ndarray] = []
    _dissect(node_graph(mesh), mesh.nodes, np.arange(mesh.n_nodes), leaf, parts)
    return np.concatenate(parts)


def symbolic_fill(adj: sp.csr_matrix, order: np.ndarray) -> int:
    """Strictly-lower nonzeros of the Cholesky factor of ``adj`` under ``order``.

    Elimination tree by Liu's algorithm, then row-subtree traversal; the cost
    is proportional to the count itself.
    """
    n = len(order)
    g = sp.tril(adj[order][:, order], -1).tocsr()
    ip, ix = g.indptr.tolist(), g.indices.tolist()
    parent = [-1] * n
    anc = [-1] * n
    for i in range(n):
        for j in ix[ip[i]:ip[i + 1]]:
            r = j
            while anc[r] != -1 and anc[r] != i:
                anc[r], r = i, anc[r]
            if anc[r] == -1:
                anc[r] = i
                parent[r] = i
    mark = [-1] * n
    count = 0
    for i in range(n):
        mark[i] = i
        for j in ix[ip[i]:ip[i + 1]]:
            r = j
            while mark[r] != i:
                count += 1
                mark[r] = i
                r = parent[r]
    return count


def node_ordering(mesh: Mesh) -> tuple[np.ndarray, str]:
    """Lowest-fill node ordering among nested dissection, reverse Cuthill-McKee
    and the mesh's own numbering.

    Dissection wins on compact domains, the banded orderings on long thin ones
    such as a tube; the symbolic factor size decides.
    """
    adj = node_graph(mesh)
    candidates = {
        "nested-dissection": nested_dissection_nodes(mesh),
        "rcm": reverse_cuthill_mckee(adj, symmetric_mode=True).astype(np.int64),
        "natural": np.arange(mesh.n_nodes, dtype=np.int64),
    }
    fills = {k: symbolic_fill(adj, o) for k, o in candidates.items()}
    name = min(fills, key=lambda k: (fills[k], k))
    log.debug("node ordering fills %s -> %s", fills, name)
    return candidates[name], name


def dof_permutation(order: np.ndarray, cmap: ConductorIndexMap) -> np.ndarray:
    """Expand a node ordering to A-V dofs, keeping each node's dofs adjacent."""
    n = len(order)
    a = 3 * order[:, None] + np.arange(3)
    v = np.where(cmap.forward[order] >= 0, 3 * n + cmap.forward[order], -1)
    perm = np.concatenate([a, v[:, None]], axis=1).ravel()
    return perm[perm >= 0]


def fill_reducing_permutation(mesh: Mesh, cmap: ConductorIndexMap) -> np.ndarray:
    return dof_permutation(node_ordering(mesh)[0], cmap)


@dataclass
class Factorization:
    matrix: sp.csc_matrix
    lu: object
    perm: np.ndarray | None             # dof ordering applied before factoring
    n_a: int | None = None

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def fill(self) -> int:
        return int(self.lu.L.nnz + self.lu.U.nnz)

    def _backsolve(self, b: np.ndarray) -> np.ndarray:
        if self.perm is None:
            return self.lu.solve(b)
        x = np.empty_like(b)
        x[self.perm] = self.lu.solve(np.ascontiguousarray(b[self.perm]))
        return x

    def solve_raw(self, b: np.ndarray, refine: int = 3) -> tuple[np.ndarray, float]:
        """Solve M x = b; returns x and the relative residual ||Mx-b||/||b||."""
        b = np.asarray(b, dtype=complex)
        if b.shape[0] != self.shape[0]:
            raise ValueError(f"rhs has length {b.shape[0]}, matrix has {self.shape[0]} rows")
        nb = np.linalg.norm(b)
        if nb == 0:
            return np.zeros_like(b), 0.0
        x = self._backsolve(b)
        res = np.linalg.norm(self.matrix @ x - b) / nb
        for _ in range(refine):
            if res <= RESIDUAL_TOL * 1e-2:
                break
            x2 = x + self._backsolve(b - self.matrix @ x)
            res2 = np.linalg.norm(self.matrix @ x2 - b) / nb
            if res2 >= res:
                break
            x, res = x2, res2
        return x, float(res)


def _null_dof(matrix: sp.csc_matrix) -> int:
    """Dof carrying the largest entry of an approximate null vector."""
    n = matrix.shape[0]
    scale = abs(matrix).max()
    shifted = (matrix + 1e-8 * scale * sp.identity(n, format="csc")).tocsc()
    rng = np.random.default_rng(0)
    x = spla.splu(shifted).solve(rng.standard_normal(n) + 0j)
    return int(np.argmax(np.abs(x)))


def factorize(matrix, perm: np.ndarray | None = None, n_a: int | None = None) -> Factorization:
    """LU-factor ``matrix`` once for reuse by many right-hand sides.

    ``perm`` is a fill-reducing dof ordering (see ``fill_reducing_permutation``);
    without it SuperLU's COLAMD ordering and partial pivoting are used.
    """
    m = sp.csc_matrix(matrix, dtype=complex)
    if m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    m.sum_duplicates()
    work = m if perm is None else m[perm][:, perm].tocsc()
    try:
        if perm is None:
            lu = spla.splu(work, permc_spec="COLAMD")
        else:
            lu = spla.splu(work, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                           options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        if "singular" in str(exc).lower():
            raise SingularMatrixError(_null_dof(m), n_a) from None
        raise SolverError(str(exc)) from None

    # tiny pivots relative to their column mean a numerically singular matrix
    u = np.abs(lu.U.diagonal())
    colnorm = np.sqrt(np.asarray(abs(work).power(2).sum(axis=0)).ravel())
    # Pr A Pc = LU: column j of U comes from column argsort(perm_c)[j] of ``work``
    pc = np.argsort(lu.perm_c)
    bad = np.flatnonzero(u <= PIVOT_TOL * colnorm[pc])
    if len(bad):
        dof = int(pc[bad[0]])
        if perm is not None:
            dof = int(perm[dof])
        raise SingularMatrixError(dof, n_a)
    return Factorization(m, lu, perm, n_a)


def split_solution(x: np.ndarray, cmap: ConductorIndexMap, omega: float, residual: float,
                   n_nodes: int, **info) -> PotentialSolution:
    A = x[:3 * n_nodes].reshape(n_nodes, 3)
    V = x[3 * n_nodes:]
    if len(V) != cmap.size:
        raise ValueError("solution length does not match the conductor map")
    return PotentialSolution(A=A.copy(), V=V.copy(), omega=omega, cmap=cmap,
                             residual=residual, **info)


def solve(f: Factorization, rhs: np.ndarray, cmap: ConductorIndexMap, omega: float) -> PotentialSolution:
    x, res = f.solve_raw(rhs)
    if res > RESIDUAL_TOL:
        raise SolverError(f"direct solve residual {res:.2e} exceeds {RESIDUAL_TOL:.0e}")
    n_nodes = (len(rhs) - cmap.size) // 3
    return split_solution(x, cmap, omega, res, n_nodes)


def solve_iterative(matrix, rhs: np.ndarray, tol: float = 1e-8, max_iter: int = 500,
                    cmap: ConductorIndexMap | None = None, omega: float = 1.0,
                    drop_tol: float = 1e-8, fill_factor: float = 30.0,
                    restart: int = 50) -> PotentialSolution:
    """GMRES with an incomplete-LU preconditioner.

    The returned solution reports the achieved true residual and whether it
    met ``tol``; GMRES breakdown or a failed preconditioner raises.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    m = sp.csc_matrix(matrix, dtype=complex)
    b = np.asarray(rhs, dtype=complex)
    if b.shape[0] != m.shape[0]:
        raise ValueError("rhs length does not match the matrix")
    nb = np.linalg.norm(b)
    n = m.shape[0]
    if cmap is None:
        cmap = ConductorIndexMap(np.full(n // 3, -1), np.zeros(0, dtype=np.int64))
    if nb == 0:
        return split_solution(np.zeros(n, dtype=complex), cmap, omega, 0.0, n // 3 if cmap.size == 0
                              else (n - cmap.size) // 3, converged=True, iterations=0)
    try:
        ilu = spla.spilu(m, drop_tol=drop_tol, fill_factor=fill_factor)
    except RuntimeError as exc:
        raise SolverError(f"incomplete factorization failed: {exc}") from None
    M = spla.LinearOperator(m.shape, ilu.solve, dtype=complex)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.gmres(m, b, rtol=tol, atol=0.0, restart=restart, maxiter=max_iter,
                         M=M, callback=cb, callback_type="pr_norm")
    if info < 0:
        raise SolverError(f"GMRES breakdown (info={info})")
    res = float(np.linalg.norm(m @ x - b) / nb)
    converged = res <= tol
    if not converged:
        log.warning("GMRES stopped at residual %.3e > tol %.1e after %d iterations", res, tol, count[0])
    n_nodes = (n - cmap.size) // 3
    return split_solution(x, cmap, omega, res, n_nodes, converged=converged, iterations=count[0])
