"""Embedded deformation: per-node rigid transforms blended over vertices.

Each deformation node carries 9 parameters: a 6D rotation (the first two
rows of the rotation matrix, orthonormalized by Gram-Schmidt) and a
translation. A vertex bound to nodes A(v) with weights w moves to

    v' = sum_i w_i * (R_i (v - g_i) + g_i + t_i).

All derivatives are analytic; finite differences appear only in tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from .binding import BindingTable
from .mesh import TriMesh
from .validation import as_points

IDENTITY_PARAMS = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
_DEGENERATE_NORM = 1e-9


class SingularRotationError(ValueError):
    """6D rotation parameters are degenerate (zero or parallel vectors)."""


def rot6d_to_matrix(params: np.ndarray) -> np.ndarray:
    """Decode 6D rotation parameters into rotation matrices.

    Accepts shape (6,) or (k, 6); returns (3, 3) or (k, 3, 3). The first
    3-vector is normalized into row 1, the second is orthonormalized
    against it into row 2, and row 3 is their cross product.
    """
    r = np.asarray(params, dtype=np.float64)
    single = r.ndim == 1
    r = np.atleast_2d(r)
    if r.shape[1] != 6:
        raise ValueError(f"rotation parameters must have 6 components, got {r.shape}")

    a1, a2 = r[:, :3], r[:, 3:]
    n1 = np.linalg.norm(a1, axis=1)
    if (n1 <= _DEGENERATE_NORM).any():
        bad = int(np.flatnonzero(n1 <= _DEGENERATE_NORM)[0])
        raise SingularRotationError(f"first rotation vector near zero at node {bad}")
    b1 = a1 / n1[:, None]
    u = a2 - (b1 * a2).sum(axis=1)[:, None] * b1
    nu = np.linalg.norm(u, axis=1)
    if (nu <= _DEGENERATE_NORM).any():
        bad = int(np.flatnonzero(nu <= _DEGENERATE_NORM)[0])
        raise SingularRotationError(
            f"second rotation vector near parallel to first at node {bad}"
        )
    b2 = u / nu[:, None]
    b3 = np.cross(b1, b2)
    R = np.stack([b1, b2, b3], axis=1)
    return R[0] if single else R


def _skew(v: np.ndarray) -> np.ndarray:
    """Batched cross-product matrices: skew(v) @ x == cross(v, x)."""
    k = len(v)
    S = np.zeros((k, 3, 3))
    S[:, 0, 1] = -v[:, 2]
    S[:, 0, 2] = v[:, 1]
    S[:, 1, 0] = v[:, 2]
    S[:, 1, 2] = -v[:, 0]
    S[:, 2, 0] = -v[:, 1]
    S[:, 2, 1] = v[:, 0]
    return S


def rot6d_jacobian(params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation matrices and their derivative w.r.t. the 6 parameters.

    Returns ``(R, dR)`` with shapes (k, 3, 3) and (k, 3, 3, 6):
    ``dR[n, i, j, p]`` is the partial of ``R[n, i, j]`` w.r.t. parameter p
    of node n. Derivatives chain exactly through the Gram-Schmidt steps.
    """
    r = np.atleast_2d(np.asarray(params, dtype=np.float64))
    R = rot6d_to_matrix(r)  # also validates for degeneracy
    k = len(r)
    a1, a2 = r[:, :3], r[:, 3:]
    n1 = np.linalg.norm(a1, axis=1)
    b1 = a1 / n1[:, None]
    c = (b1 * a2).sum(axis=1)
    u = a2 - c[:, None] * b1
    nu = np.linalg.norm(u, axis=1)
    b2 = u / nu[:, None]

    eye = np.broadcast_to(np.eye(3), (k, 3, 3))
    db1_da1 = (eye - b1[:, :, None] * b1[:, None, :]) / n1[:, None, None]
    du_da2 = eye - b1[:, :, None] * b1[:, None, :]
    du_db1 = -c[:, None, None] * eye - b1[:, :, None] * a2[:, None, :]
    du_da1 = du_db1 @ db1_da1
    db2_du = (eye - b2[:, :, None] * b2[:, None, :]) / nu[:, None, None]
    db2_da1 = db2_du @ du_da1
    db2_da2 = db2_du @ du_da2

    s1, s2 = _skew(b1), _skew(b2)
    db3_da1 = -s2 @ db1_da1 + s1 @ db2_da1
    db3_da2 = s1 @ db2_da2

    dR = np.zeros((k, 3, 3, 6))
    dR[:, 0, :, :3] = db1_da1
    dR[:, 1, :, :3] = db2_da1
    dR[:, 1, :, 3:] = db2_da2
    dR[:, 2, :, :3] = db3_da1
    dR[:, 2, :, 3:] = db3_da2
    return R, dR


@dataclass
class DeformGraph:
    """Deformation nodes: positions, connectivity, and 9 parameters each."""

    nodes: np.ndarray
    edges: np.ndarray
    params: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.nodes = as_points(self.nodes, "nodes")
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        k = len(self.nodes)
        if self.edges.size:
            if self.edges.min() < 0 or self.edges.max() >= k:
                raise ValueError("graph edge index out of range")
            lo = np.sort(self.edges, axis=1)
            if len(np.unique(lo, axis=0)) != len(lo):
                raise ValueError("graph edges contain duplicates")
        if self.params is None:
            self.params = np.tile(IDENTITY_PARAMS, (k, 1))
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (k, 9):
            raise ValueError(f"params must be ({k}, 9), got {self.params.shape}")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def rotations(self) -> np.ndarray:
        return rot6d_to_matrix(self.params[:, :6])

    def translations(self) -> np.ndarray:
        return self.params[:, 6:]

    def with_params(self, params: np.ndarray) -> "DeformGraph":
        return DeformGraph(nodes=self.nodes, edges=self.edges, params=params)


def _flat_binding(binding, n_points):
    if isinstance(binding, BindingTable):
        vert, node, w = binding.flat()
    else:
        vert, node, w = binding
    vert = np.asarray(vert, dtype=np.int64)
    node = np.asarray(node, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    if not (len(vert) == len(node) == len(w)):
        raise ValueError("flattened binding arrays must share length")
    if len(vert) and vert.max() >= n_points:
        raise ValueError("binding references a vertex beyond the point set")
    return vert, node, w


def apply_ed_points(
    points: np.ndarray, graph: DeformGraph, binding, rotations: np.ndarray | None = None
) -> np.ndarray:
    """Deform arbitrary points with the graph under a (possibly ad hoc)
    binding.

    ``binding`` is a BindingTable or pre-flattened ``(vertex_index,
    node_index, weight)`` arrays. ``rotations`` can pass pre-decoded
    matrices to avoid repeating the 6D decode inside optimization loops.
    """
    points = as_points(points)
    vert, node, w = _flat_binding(binding, len(points))
    R = graph.rotations() if rotations is None else rotations
    t = graph.translations()
    g = graph.nodes

    q = points[vert] - g[node]
    moved = np.einsum("mij,mj->mi", R[node], q) + g[node] + t[node]
    out = np.zeros_like(points)
    np.add.at(out, vert, w[:, None] * moved)
    return out


def apply_ed(mesh: TriMesh, graph: DeformGraph, binding) -> np.ndarray:
    """Deformed vertex positions of a bound mesh."""
    return apply_ed_points(mesh.vertices, graph, binding)


def ed_backward(
    points: np.ndarray,
    graph: DeformGraph,
    binding,
    grad_output: np.ndarray,
    rotation_jacobian: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate a gradient w.r.t. deformed points.

    Returns ``(grad_points, grad_params)``: the pullback onto the input
    points (needed when deformations are composed) and onto the 9K node
    parameters. ``rotation_jacobian`` may pass a precomputed
    ``rot6d_jacobian`` result.
    """
    points = as_points(points)
    grad_output = np.asarray(grad_output, dtype=np.float64)
    vert, node, w = _flat_binding(binding, len(points))
    R, dR = (
        rot6d_jacobian(graph.params[:, :6])
        if rotation_jacobian is None
        else rotation_jacobian
    )
    g = graph.nodes
    k = graph.n_nodes

    q = points[vert] - g[node]
    gm = w[:, None] * grad_output[vert]  # (m, 3)

    # translations: dv'/dt_i = w * I
    grad_params = np.zeros((k, 9))
    np.add.at(grad_params[:, 6:], node, gm)

    # rotations: dL/dR_i = sum_m w_m grad_m q_m^T, then through dR/dr6
    grad_R = np.zeros((k, 3, 3))
    np.add.at(grad_R, node, gm[:, :, None] * q[:, None, :])
    grad_params[:, :6] = np.einsum("kij,kijp->kp", grad_R, dR)

    # input points: dv'/dv = sum_i w_i R_i
    pulled = np.einsum("mji,mj->mi", R[node], gm)  # R^T grad per entry
    grad_points = np.zeros_like(points)
    np.add.at(grad_points, vert, pulled)
    return grad_points, grad_params


def ed_jacobian(mesh: TriMesh, graph: DeformGraph, binding) -> scipy.sparse.csr_matrix:
    """Sparse Jacobian of all deformed positions w.r.t. all node parameters.

    Shape (3N, 9K), rows ordered x0 y0 z0 x1 ..., columns ordered by node
    with the 6 rotation parameters before the 3 translations. The sparsity
    pattern mirrors the binding.
    """
    points = mesh.vertices
    vert, node, w = _flat_binding(binding, len(points))
    R, dR = rot6d_jacobian(graph.params[:, :6])
    q = points[vert] - graph.nodes[node]

    # rotation block: w * d(R q)/dr6 -> (m, 3, 6)
    rot_block = w[:, None, None] * np.einsum("mijp,mj->mip", dR[node], q)
    # translation block: w * I -> (m, 3, 3)
    trans_block = w[:, None, None] * np.broadcast_to(np.eye(3), (len(w), 3, 3))

    block = np.concatenate([rot_block, trans_block], axis=2)  # (m, 3, 9)
    rows = (3 * vert)[:, None, None] + np.arange(3)[None, :, None]
    cols = (9 * node)[:, None, None] + np.arange(9)[None, None, :]
    rows = np.broadcast_to(rows, block.shape)
    cols = np.broadcast_to(cols, block.shape)
    mat = scipy.sparse.coo_matrix(
        (block.ravel(), (rows.ravel(), cols.ravel())),
        shape=(3 * len(points), 9 * graph.n_nodes),
    )
    return mat.tocsr()


def write_transforms(params: np.ndarray) -> str:
    """Serialize per-node transforms: one line of 9 numbers per node."""
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 2 or params.shape[1] != 9:
        raise ValueError(f"params must be (k, 9), got {params.shape}")
    lines = ["# node transforms: 6 rotation + 3 translation per line"]
    for row in params:
        lines.append(" ".join(repr(float(x)) for x in row))
    lines.append("")
    return "\n".join(lines)


def read_transforms(text: str) -> np.ndarray:
    """Parse the transform file format written by :func:`write_transforms`."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 9:
            raise ValueError(f"line {lineno}: expected 9 numbers, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ValueError(f"line {lineno}: malformed number") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 9)
