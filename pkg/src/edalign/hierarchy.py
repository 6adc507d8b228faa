"""Mesh hierarchy construction by repeated Graclus coarsening.

Each coarsening pass greedily matches vertex pairs that maximize the local
normalized cut ``w_ij * (1/d_i + 1/d_j)`` with unit edge weights, visiting
vertices in a seed-shuffled order. Unmatched vertices survive as singleton
clusters, so every pass retains between half and all of the vertices. The
coarsest level doubles as the deformation graph; pooled cluster centers can
be traced back to the fine vertices they absorbed by composing the
per-level assignments.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import TriMesh


@dataclass(frozen=True)
class PoolingMap:
    """One coarsening step: fine vertex -> cluster index plus pooling weight.

    Weights are nonnegative and sum to 1 within each cluster; clusters hold
    one or two members (greedy pair matching).
    """

    assignment: np.ndarray
    weights: np.ndarray
    n_clusters: int

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_clusters)


@dataclass(frozen=True)
class GraphLevel:
    """Positions and undirected unique edges of one hierarchy level."""

    positions: np.ndarray
    edges: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    def adjacency(self) -> list[np.ndarray]:
        n = self.n_vertices
        if self.edges.size == 0:
            return [np.empty(0, dtype=np.int64) for _ in range(n)]
        both = np.concatenate([self.edges, self.edges[:, ::-1]], axis=0)
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        counts = np.bincount(both[:, 0], minlength=n)
        return list(np.split(both[:, 1], np.cumsum(counts)[:-1]))


@dataclass
class MeshHierarchy:
    """Levels produced by repeated coarsening of one input mesh.

    ``levels[0]`` mirrors the input mesh; ``levels[-1]`` is the deformation
    graph. ``composed_assignment[v]`` is the coarsest-level node that fine
    vertex ``v`` reaches through all pooling steps.
    """

    mesh: TriMesh
    levels: list[GraphLevel]
    pools: list[PoolingMap]
    composed_assignment: np.ndarray = field(init=False)

    def __post_init__(self):
        comp = np.arange(self.levels[0].n_vertices)
        for pool in self.pools:
            comp = pool.assignment[comp]
        self.composed_assignment = comp

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def graph_level(self) -> GraphLevel:
        return self.levels[-1]

    def trace(self, node_index: int) -> np.ndarray:
        """Fine vertices of level 1 that pooled into the given coarsest node."""
        k = self.graph_level.n_vertices
        if not 0 <= node_index < k:
            raise IndexError(f"node index {node_index} out of range [0, {k})")
        return np.flatnonzero(self.composed_assignment == node_index)

    def trace_all(self) -> list[np.ndarray]:
        """Clusters of all coarsest nodes, via table lookups in O(N)."""
        comp = self.composed_assignment
        order = np.argsort(comp, kind="stable")
        counts = np.bincount(comp, minlength=self.graph_level.n_vertices)
        return list(np.split(order, np.cumsum(counts)[:-1]))


def _extract_adjacency(graph) -> list[np.ndarray]:
    if isinstance(graph, TriMesh):
        return list(graph.vertex_adjacency)
    if isinstance(graph, GraphLevel):
        return graph.adjacency()
    return [np.asarray(a, dtype=np.int64) for a in graph]


def graclus_coarsen(graph, rng_seed: int) -> PoolingMap:
    """One pass of greedy normalized-cut pair matching.

    ``graph`` may be a TriMesh, a GraphLevel, or a plain adjacency list.
    Vertices are visited in an order shuffled by ``rng_seed``; each unmarked
    vertex merges with the unmarked neighbor maximizing ``1/d_i + 1/d_j``
    (unit edge weights), ties going to the lowest neighbor index. Pooling
    weights are uniform within each cluster.
    """
    adjacency = _extract_adjacency(graph)
    n = len(adjacency)
    if n == 0:
        raise ValueError("cannot coarsen an empty graph")
    degree = np.array([len(a) for a in adjacency], dtype=np.float64)
    inv_degree = np.where(degree > 0, 1.0 / np.maximum(degree, 1.0), 0.0)

    order = np.random.default_rng(rng_seed).permutation(n)
    marked = np.zeros(n, dtype=bool)
    assignment = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for v in order:
        if marked[v]:
            continue
        marked[v] = True
        best = -1
        best_score = 0.0
        for u in adjacency[v]:
            if marked[u]:
                continue
            score = inv_degree[v] + inv_degree[u]
            if score > best_score:
                best_score = score
                best = int(u)
        assignment[v] = cluster
        if best >= 0:
            marked[best] = True
            assignment[best] = cluster
        cluster += 1

    sizes = np.bincount(assignment, minlength=cluster)
    weights = 1.0 / sizes[assignment]
    return PoolingMap(assignment=assignment, weights=weights, n_clusters=cluster)


def pool_positions(positions: np.ndarray, pool: PoolingMap) -> np.ndarray:
    """Coarse positions as the weighted combination of each cluster."""
    positions = np.asarray(positions, dtype=np.float64)
    out = np.zeros((pool.n_clusters, positions.shape[1]))
    np.add.at(out, pool.assignment, pool.weights[:, None] * positions)
    return out


def coarsen_edges(fine_edges: np.ndarray, pool: PoolingMap) -> np.ndarray:
    """Contract edges through the pooling assignment, dropping duplicates
    and self loops."""
    fine_edges = np.asarray(fine_edges, dtype=np.int64)
    if fine_edges.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    mapped = pool.assignment[fine_edges]
    mapped = mapped[mapped[:, 0] != mapped[:, 1]]
    if mapped.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    mapped.sort(axis=1)
    return np.unique(mapped, axis=0)


def build_hierarchy(mesh: TriMesh, num_levels: int, rng_seed: int) -> MeshHierarchy:
    """Coarsen ``mesh`` ``num_levels - 1`` times, deterministically in
    ``rng_seed``."""
    if num_levels < 2:
        raise ValueError(f"num_levels must be >= 2, got {num_levels}")
    if mesh.n_vertices == 0:
        raise ValueError("cannot build a hierarchy over an empty mesh")

    seeds = np.random.default_rng(rng_seed).integers(0, 2**32 - 1, size=num_levels - 1)
    levels = [GraphLevel(positions=mesh.vertices, edges=mesh.edges)]
    pools: list[PoolingMap] = []
    for step in range(num_levels - 1):
        current = levels[-1]
        pool = graclus_coarsen(current, int(seeds[step]))
        positions = pool_positions(current.positions, pool)
        edges = coarsen_edges(current.edges, pool)
        level_number = step + 2
        if level_number < num_levels and pool.n_clusters < 4:
            raise ValueError(
                f"hierarchy level {level_number} collapsed to "
                f"{pool.n_clusters} vertices before reaching {num_levels} levels"
            )
        levels.append(GraphLevel(positions=positions, edges=edges))
        pools.append(pool)
    return MeshHierarchy(mesh=mesh, levels=levels, pools=pools)


def hierarchy_report(hierarchy: MeshHierarchy) -> str:
    """Line-oriented text summary with stable key order (CLI output)."""
    lines = [f"levels: {hierarchy.n_levels}"]
    for i, level in enumerate(hierarchy.levels, start=1):
        lines.append(f"level {i}: vertices={level.n_vertices} edges={len(level.edges)}")
    for i, pool in enumerate(hierarchy.pools, start=1):
        sizes = pool.cluster_sizes()
        singles = int((sizes == 1).sum())
        pairs = int((sizes == 2).sum())
        lines.append(
            f"pool {i}: clusters={pool.n_clusters} singletons={singles} pairs={pairs}"
        )
    mean_cluster = hierarchy.levels[0].n_vertices / hierarchy.graph_level.n_vertices
    lines.append(f"mean traced cluster size: {mean_cluster:.6g}")
    lines.append("")
    return "\n".join(lines)
