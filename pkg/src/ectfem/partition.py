"""Greedy graph-growing partition of the tet dual graph."""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh


@dataclass(frozen=True)
class PartitionMap:
    part_of: np.ndarray     # (M,) part id per tet
    n_parts: int

    def members(self, p: int) -> np.ndarray:
        return np.flatnonzero(self.part_of == p)


@dataclass(frozen=True)
class PartitionStats:
    sizes: np.ndarray
    imbalance: float        # max part size / mean part size
    edge_cut: int           # dual-graph edges joining different parts

    def footer(self) -> str:
        return (f"# parts={len(self.sizes)} imbalance={self.imbalance:.4f} "
                f"cut={self.edge_cut} min={self.sizes.min()} max={self.sizes.max()}")


def _bfs_order(start: int, indptr, indices, allowed: np.ndarray) -> np.ndarray:
    """Distances from ``start`` restricted to ``allowed`` tets (-1 = unreached)."""
    dist = np.full(len(allowed), -1, dtype=np.int64)
    dist[start] = 0
    q = deque([start])
    while q:
        u = q.popleft()
        for v in indices[indptr[u]:indptr[u + 1]]:
            if allowed[v] and dist[v] < 0:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def _pick_seeds(n_parts: int, indptr, indices, rng: np.random.Generator, m: int) -> list[int]:
    allowed = np.ones(m, dtype=bool)
    seeds = [int(rng.integers(m))]
    mind = _bfs_order(seeds[0], indptr, indices, allowed).astype(float)
    mind[mind < 0] = np.inf
    while len(seeds) < n_parts:
        cand = np.where(np.isin(np.arange(m), seeds), -1.0, mind)
        # farthest tet from all seeds; argmax returns the lowest index on ties
        nxt = int(np.argmax(cand))
        seeds.append(nxt)
        d = _bfs_order(nxt, indptr, indices, allowed).astype(float)
        d[d < 0] = np.inf
        mind = np.minimum(mind, d)
    return seeds


def _connected_after_removal(part: np.ndarray, p: int, t: int, indptr, indices) -> bool:
    """Would part ``p`` stay face-connected if tet ``t`` left it?"""
    nbrs = [v for v in indices[indptr[t]:indptr[t + 1]] if part[v] == p]
    if len(nbrs) <= 1:
        return True
    target = set(nbrs[1:])
    seen = {t, nbrs[0]}
    q = deque([nbrs[0]])
    while q and target:
        u = q.popleft()
        for v in indices[indptr[u]:indptr[u + 1]]:
            if part[v] == p and v not in seen:
                seen.add(v)
                target.discard(v)
                q.append(v)
    return not target


def partition_tets(mesh: Mesh, n_parts: int, seed: int = 0) -> PartitionMap:
    if n_parts < 1:
        raise ValueError("number of parts must be >= 1")
    m = mesh.n_tets
    if n_parts == 1:
        return PartitionMap(np.zeros(m, dtype=np.int64), 1)
    if n_parts >= m:
        return PartitionMap(np.arange(m, dtype=np.int64) % n_parts, n_parts)

    indptr, indices = mesh.topology().dual_graph()
    rng = np.random.default_rng(seed)
    seeds = _pick_seeds(n_parts, indptr, indices, rng, m)
    cap = -(-m // n_parts)

    part = np.full(m, -1, dtype=np.int64)
    sizes = np.zeros(n_parts, dtype=np.int64)
    # frontier entries are (BFS depth, tet index): breadth-first, ties by index
    frontiers: list[list[tuple[int, int]]] = [[] for _ in range(n_parts)]
    for p, s in enumerate(seeds):
        part[s] = p
        sizes[p] = 1
        for v in indices[indptr[s]:indptr[s + 1]]:
            heapq.heappush(frontiers[p], (1, int(v)))

    # grow the smallest active part by one tet per step
    active = [(1, p) for p in range(n_parts)]
    heapq.heapify(active)
    while active:
        size, p = heapq.heappop(active)
        fr = frontiers[p]
        while fr and part[fr[0][1]] >= 0:
            heapq.heappop(fr)
        if not fr or sizes[p] >= cap:
            continue
        depth, t = heapq.heappop(fr)
        part[t] = p
        sizes[p] += 1
        for v in indices[indptr[t]:indptr[t + 1]]:
            if part[v] < 0:
                heapq.heappush(fr, (depth + 1, int(v)))
        heapq.heappush(active, (int(sizes[p]), p))

    # leftovers join the smallest adjacent part, breadth-first from assigned tets
    left = np.flatnonzero(part < 0)
    while len(left):
        progressed = False
        for t in left:
            nb = [part[v] for v in indices[indptr[t]:indptr[t + 1]] if part[v] >= 0]
            if nb:
                p = min(nb, key=lambda q: (sizes[q], q))
                part[t] = p
                sizes[p] += 1
                progressed = True
        if not progressed:
            # disconnected dual graph component: spread it round-robin by size
            for t in left:
                p = int(np.argmin(sizes))
                part[t] = p
                sizes[p] += 1
        left = np.flatnonzero(part < 0)

    _balance(part, sizes, cap, indptr, indices)
    return PartitionMap(part, n_parts)


def _balance(part, sizes, cap, indptr, indices, max_sweeps: int = 20) -> None:
    limit = int(np.floor(cap * 1.05))
    for _ in range(max_sweeps):
        over = [p for p in np.argsort(-sizes, kind="stable") if sizes[p] > limit]
        if not over:
            return
        moved = False
        for p in over:
            boundary = []
            for t in np.flatnonzero(part == p):
                nb = {int(part[v]) for v in indices[indptr[t]:indptr[t + 1]]} - {int(p)}
                if nb:
                    boundary.append((t, nb))
            for t, nb in boundary:
                if sizes[p] <= limit:
                    break
                q = min(nb, key=lambda r: (sizes[r], r))
                if sizes[q] + 1 >= sizes[p]:
                    continue
                if _connected_after_removal(part, p, t, indptr, indices):
                    part[t] = q
                    sizes[p] -= 1
                    sizes[q] += 1
                    moved = True
        if not moved:
            return


def partition_stats(pmap: PartitionMap, mesh: Mesh) -> PartitionStats:
    sizes = np.bincount(pmap.part_of, minlength=pmap.n_parts)
    topo = mesh.topology()
    pairs = topo.owners[topo.counts == 2]
    cut = int(np.count_nonzero(pmap.part_of[pairs[:, 0]] != pmap.part_of[pairs[:, 1]]))
    return PartitionStats(sizes, float(sizes.max() / sizes.mean()), cut)


def parts_connected(pmap: PartitionMap, mesh: Mesh) -> bool:
    from .mesh import connected_components

    indptr, indices = mesh.topology().dual_graph()
    for p in range(pmap.n_parts):
        mask = pmap.part_of == p
        if mask.any() and connected_components(mesh.n_tets, indptr, indices, mask).max() > 0:
            return False
    return True
