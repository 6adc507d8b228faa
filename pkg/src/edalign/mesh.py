"""Indexed triangle meshes and Wavefront OBJ round-trip.

The :class:`TriMesh` container is immutable after construction and carries
the derived connectivity (unique undirected edges, per-vertex neighbor
lists) that the rest of the pipeline consumes.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np


class OBJError(ValueError):
    """Raised for malformed OBJ input; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TriMesh:
    """Triangle mesh with vertex positions, faces, and derived adjacency.

    Parameters
    ----------
    vertices : array-like, shape (n, 3)
        Vertex positions.
    faces : array-like, shape (m, 3)
        Vertex index triples. Indices must be in ``[0, n)`` and distinct
        within each face.
    """

    def __init__(self, vertices, faces):
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.size == 0:
            vertices = vertices.reshape(0, 3)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (n, 3), got {vertices.shape}")
        if not np.isfinite(vertices).all():
            raise ValueError("vertices contain non-finite values")

        faces = np.asarray(faces, dtype=np.int64)
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError(f"faces must be (m, 3), got {faces.shape}")
        n = len(vertices)
        if faces.size:
            if faces.min() < 0 or faces.max() >= n:
                raise ValueError("face index out of range")
            degenerate = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 0] == faces[:, 2])
            )
            if degenerate.any():
                bad = int(np.flatnonzero(degenerate)[0])
                raise ValueError(f"face {bad} repeats a vertex index")

        vertices.setflags(write=False)
        faces.setflags(write=False)
        self.vertices = vertices
        self.faces = faces
        self.edges = _unique_edges(faces)
        self.edges.setflags(write=False)
        self.vertex_adjacency = _adjacency_from_edges(n, self.edges)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def bounding_box_diagonal(self) -> float:
        """Length of the axis-aligned bounding box diagonal (0 if empty)."""
        if self.n_vertices == 0:
            return 0.0
        extent = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(extent))

    def with_vertices(self, vertices) -> "TriMesh":
        """New mesh with the same faces and replaced vertex positions."""
        return TriMesh(vertices, self.faces)

    def __repr__(self) -> str:
        return f"TriMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"


def _unique_edges(faces: np.ndarray) -> np.ndarray:
    """Unique undirected edges (each pair once, low index first)."""
    if faces.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    halfedges = np.concatenate(
        [faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=0
    )
    halfedges.sort(axis=1)
    return np.unique(halfedges, axis=0)


def _adjacency_from_edges(n_vertices: int, edges: np.ndarray) -> tuple:
    """Per-vertex neighbor arrays, each sorted ascending."""
    if edges.size == 0:
        return tuple(np.empty(0, dtype=np.int64) for _ in range(n_vertices))
    both = np.concatenate([edges, edges[:, ::-1]], axis=0)
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    counts = np.bincount(both[:, 0], minlength=n_vertices)
    splits = np.split(both[:, 1], np.cumsum(counts)[:-1])
    out = []
    for a in splits:
        a = np.ascontiguousarray(a)
        a.setflags(write=False)
        out.append(a)
    return tuple(out)


def _resolve_face_index(token: str, n_seen: int, line: int) -> int:
    """Resolve an OBJ face index token against the vertices seen so far.

    Positive indices are 1-based; negative indices count back from the most
    recently defined vertex.
    """
    head = token.split("/")[0]
    try:
        idx = int(head)
    except ValueError:
        raise OBJError(f"malformed face index {token!r}", line) from None
    if idx == 0:
        raise OBJError("face index 0 is not allowed", line)
    if idx > 0:
        if idx > n_seen:
            raise OBJError(f"face index {idx} exceeds vertex count {n_seen}", line)
        return idx - 1
    if -idx > n_seen:
        raise OBJError(f"relative face index {idx} reaches before first vertex", line)
    return n_seen + idx


def parse_obj(source: str | Iterable[str]) -> TriMesh:
    """Parse Wavefront OBJ text into a :class:`TriMesh`.

    Only ``v`` and ``f`` records are consumed; normals, texture
    coordinates, materials, and grouping records are ignored. Polygonal
    faces are fan-triangulated. Raises :class:`OBJError` with the offending
    line number on malformed input.
    """
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = [str(s) for s in source]

    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0]
        tokens = text.split()
        if not tokens:
            continue
        tag = tokens[0]
        if tag == "v":
            if len(tokens) < 4:
                raise OBJError("vertex record needs 3 coordinates", lineno)
            try:
                vertices.append([float(t) for t in tokens[1:4]])
            except ValueError:
                raise OBJError(
                    f"malformed numeric literal in {text.strip()!r}", lineno
                ) from None
        elif tag == "f":
            if len(tokens) < 4:
                raise OBJError("face record needs at least 3 indices", lineno)
            poly = [_resolve_face_index(t, len(vertices), lineno) for t in tokens[1:]]
            for i in range(1, len(poly) - 1):
                tri = (poly[0], poly[i], poly[i + 1])
                if tri[0] == tri[1] or tri[1] == tri[2] or tri[0] == tri[2]:
                    raise OBJError("face repeats a vertex index", lineno)
                faces.append(tri)
        # all other record types are skipped
    return TriMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3), faces)


def write_obj(mesh: TriMesh) -> str:
    """Serialize a mesh as OBJ text.

    Coordinates are printed with shortest round-trip precision, so
    ``parse_obj(write_obj(m))`` reproduces the vertex array exactly and the
    output is byte-stable across runs.
    """
    out = []
    for v in mesh.vertices:
        out.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for f in mesh.faces:
        out.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    out.append("")
    return "\n".join(out)


def load_obj(path: str | Path) -> TriMesh:
    """Read an OBJ file from disk."""
    return parse_obj(Path(path).read_text())


def save_obj(mesh: TriMesh, path: str | Path) -> None:
    """Write a mesh to disk as OBJ."""
    Path(path).write_text(write_obj(mesh))


def uniform_laplacian_coords(mesh: TriMesh, positions: np.ndarray | None = None) -> np.ndarray:
    """Differential coordinates under the uniform (combinatorial) Laplacian.

    For each vertex j returns ``v_j - mean(neighbors(j))``. When
    ``positions`` is given, the mesh supplies connectivity only and the
    coordinates are evaluated at the supplied positions (used to compare an
    original and a deformed embedding of the same mesh).
    """
    pos = mesh.vertices if positions is None else np.asarray(positions, dtype=np.float64)
    if pos.shape != (mesh.n_vertices, 3):
        raise ValueError(f"positions must be ({mesh.n_vertices}, 3), got {pos.shape}")
    degree = np.array([len(a) for a in mesh.vertex_adjacency])
    if (degree == 0).any():
        bad = int(np.flatnonzero(degree == 0)[0])
        raise ValueError(f"vertex {bad} is isolated (no neighbors)")
    neighbor_sum = np.zeros_like(pos)
    if mesh.n_edges:
        e = mesh.edges
        np.add.at(neighbor_sum, e[:, 0], pos[e[:, 1]])
        np.add.at(neighbor_sum, e[:, 1], pos[e[:, 0]])
    return pos - neighbor_sum / degree[:, None]
