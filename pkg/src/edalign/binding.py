"""Vertex-to-node binding: which deformation nodes control each vertex.

Two strategies are provided. Hierarchy tracing assigns each vertex the node
its cluster pooled into plus that node's graph neighbors, so control never
leaks across parts of the surface that are close in space but unconnected
in the graph. Euclidean knn is the classical baseline and does leak across
near-contact geometry.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hierarchy import MeshHierarchy
from .validation import as_points


@dataclass
class BindingTable:
    """Per-vertex control node indices and blending weights.

    ``controls[j]`` and ``weights[j]`` are aligned arrays; weights are
    nonnegative and sum to 1 for every vertex.
    """

    controls: list[np.ndarray]
    weights: list[np.ndarray]
    n_nodes: int

    def __post_init__(self):
        self._flat = None

    @property
    def n_vertices(self) -> int:
        return len(self.controls)

    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(vertex_index, node_index, weight) triples, one per binding entry."""
        if self._flat is None:
            counts = np.array([len(c) for c in self.controls])
            vert = np.repeat(np.arange(self.n_vertices), counts)
            node = np.concatenate(self.controls) if len(self.controls) else np.empty(0, int)
            w = np.concatenate(self.weights) if len(self.weights) else np.empty(0)
            self._flat = (vert, node.astype(np.int64), w.astype(np.float64))
        return self._flat


def compute_weights(vertex: np.ndarray, control_positions: np.ndarray) -> np.ndarray:
    """Distance-falloff weights ``(1 - d/d_max)^2`` normalized to sum 1.

    ``d_max`` is inflated 5% above the farthest control so the farthest
    node keeps a small positive weight. If every control coincides with the
    vertex the weights are uniform.
    """
    control_positions = np.atleast_2d(np.asarray(control_positions, dtype=np.float64))
    if len(control_positions) == 0:
        raise ValueError("need at least one control position")
    d = np.linalg.norm(control_positions - np.asarray(vertex, dtype=np.float64), axis=1)
    d_max = 1.05 * d.max()
    if d_max <= 0.0:
        return np.full(len(d), 1.0 / len(d))
    raw = (1.0 - d / d_max) ** 2
    return raw / raw.sum()


def _weights_for(vertices, node_positions, controls):
    return [
        compute_weights(vertices[j], node_positions[controls[j]])
        for j in range(len(vertices))
    ]


def bind_trace_propagate(
    hierarchy: MeshHierarchy, graph_edges: np.ndarray | None = None
) -> BindingTable:
    """Bind every fine vertex through the hierarchy: its pooled node plus
    that node's graph neighbors.

    Runs in O(N + sum_i deg(g_i) * |C_i|); no nearest-neighbor search.
    ``graph_edges`` defaults to the coarsest level's edge list.
    """
    graph = hierarchy.graph_level
    edges = graph.edges if graph_edges is None else np.asarray(graph_edges, dtype=np.int64)
    k = graph.n_vertices

    node_neighbors: list[list[int]] = [[] for _ in range(k)]
    for a, b in edges:
        node_neighbors[a].append(int(b))
        node_neighbors[b].append(int(a))
    control_sets = [
        np.array([i] + sorted(node_neighbors[i]), dtype=np.int64) for i in range(k)
    ]

    assignment = hierarchy.composed_assignment
    controls = [control_sets[assignment[j]] for j in range(len(assignment))]
    vertices = hierarchy.mesh.vertices
    weights = _weights_for(vertices, graph.positions, controls)
    return BindingTable(controls=controls, weights=weights, n_nodes=k)


def bind_knn(mesh_or_points, node_positions: np.ndarray, k: int) -> BindingTable:
    """Bind each vertex to its k Euclidean-nearest nodes (ties to the lower
    node index)."""
    vertices = (
        mesh_or_points.vertices
        if hasattr(mesh_or_points, "vertices")
        else as_points(mesh_or_points)
    )
    node_positions = as_points(node_positions, "node_positions")
    n_nodes = len(node_positions)
    if not 1 <= k <= n_nodes:
        raise ValueError(f"k must be in [1, {n_nodes}], got {k}")

    controls = []
    chunk = max(1, 2_000_000 // max(1, n_nodes))
    for start in range(0, len(vertices), chunk):
        block = vertices[start : start + chunk]
        d2 = ((block[:, None, :] - node_positions[None, :, :]) ** 2).sum(axis=2)
        # stable argsort keeps the lower index on exact distance ties
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
        controls.extend(np.array(row, dtype=np.int64) for row in nearest)
    weights = _weights_for(vertices, node_positions, controls)
    return BindingTable(controls=controls, weights=weights, n_nodes=n_nodes)


def binding_dump(table: BindingTable, method: str) -> str:
    """Line-oriented text dump of a binding (stable ordering, diffable)."""
    lines = [
        f"method: {method}",
        f"vertices: {table.n_vertices}",
        f"nodes: {table.n_nodes}",
    ]
    for j in range(table.n_vertices):
        ctrl = ",".join(str(int(c)) for c in table.controls[j])
        wts = ",".join(f"{w:.9g}" for w in table.weights[j])
        lines.append(f"vertex {j}: controls={ctrl} weights={wts}")
    lines.append("")
    return "\n".join(lines)


def binding_diff(a: BindingTable, b: BindingTable, label_a: str, label_b: str) -> str:
    """Report vertices whose control sets differ between two bindings."""
    if a.n_vertices != b.n_vertices:
        raise ValueError("bindings cover different vertex counts")
    lines = [f"compare: {label_a} vs {label_b}", f"vertices: {a.n_vertices}"]
    differing = []
    for j in range(a.n_vertices):
        sa, sb = set(a.controls[j].tolist()), set(b.controls[j].tolist())
        if sa != sb:
            differing.append((j, sorted(sa - sb), sorted(sb - sa)))
    lines.append(f"differing vertices: {len(differing)}")
    for j, only_a, only_b in differing:
        lines.append(
            f"vertex {j}: only_{label_a}={','.join(map(str, only_a)) or '-'} "
            f"only_{label_b}={','.join(map(str, only_b)) or '-'}"
        )
    lines.append("")
    return "\n".join(lines)
