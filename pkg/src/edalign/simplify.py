"""Quadric-error-metric edge-collapse decimation (Garland-Heckbert).

Collapses are ordered by a lazy priority queue over accumulated plane
quadrics. Boundary edges receive an extra constraint-plane quadric so open
meshes do not shrink at holes; collapses that would flip a face normal or
pinch the surface are rejected.
"""
from __future__ import annotations

import heapq
from typing import NamedTuple

import numpy as np

from .mesh import TriMesh


class VertexMap(NamedTuple):
    """Provenance of a decimation: fine vertex -> surviving coarse index."""

    fine_to_coarse: np.ndarray


class DecimationResult(NamedTuple):
    mesh: TriMesh
    vertex_map: VertexMap
    stalled: bool


def _face_quadric(p0, p1, p2):
    """Plane quadric outer(p, p) for the supporting plane of a triangle."""
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n)
    if norm < 1e-300:
        return np.zeros((4, 4))
    n = n / norm
    p = np.array([n[0], n[1], n[2], -np.dot(n, p0)])
    return np.outer(p, p)


def _boundary_quadric(pa, pb, face_normal, weight):
    """Constraint plane through edge (pa, pb), perpendicular to the face."""
    edge = pb - pa
    n = np.cross(edge, face_normal)
    norm = np.linalg.norm(n)
    if norm < 1e-300:
        return np.zeros((4, 4))
    n = n / norm
    p = np.array([n[0], n[1], n[2], -np.dot(n, pa)])
    return weight * np.outer(p, p)


def _quadric_error(Q, pos):
    h = np.array([pos[0], pos[1], pos[2], 1.0])
    return float(h @ Q @ h)


def _optimal_position(Q, pa, pb):
    """Minimizer of the quadric form, with the standard endpoint fallback.

    The 3x3 system is declared singular when |det| < 1e-12 after scaling by
    the largest matrix entry, in which case the best of the two endpoints
    and the midpoint is used.
    """
    A = Q[:3, :3]
    b = -Q[:3, 3]
    scale = np.abs(A).max()
    if scale > 0.0:
        det = np.linalg.det(A / scale)
        if abs(det) >= 1e-12:
            pos = np.linalg.solve(A, b)
            return pos, max(0.0, _quadric_error(Q, pos))
    candidates = [pa, pb, 0.5 * (pa + pb)]
    errors = [_quadric_error(Q, c) for c in candidates]
    i = int(np.argmin(errors))
    return candidates[i], max(0.0, errors[i])


def qem_decimate(
    mesh: TriMesh, target_vertex_count: int, boundary_weight: float = 1000.0
) -> DecimationResult:
    """Decimate ``mesh`` to ``target_vertex_count`` vertices.

    Returns the coarse mesh, a total fine-to-coarse vertex map, and a flag
    that is True when no further collapse was possible before reaching the
    target (the mesh then has the smallest reachable count above it).

    Parameters
    ----------
    boundary_weight : float
        Multiplier (relative to mean face area) of the constraint-plane
        quadrics added along boundary edges.
    """
    n = mesh.n_vertices
    if target_vertex_count < 4:
        raise ValueError(f"target_vertex_count must be >= 4, got {target_vertex_count}")
    if target_vertex_count > n:
        raise ValueError(
            f"target_vertex_count {target_vertex_count} exceeds vertex count {n}"
        )

    positions = mesh.vertices.copy()
    faces = [tuple(f) for f in mesh.faces]
    face_alive = [True] * len(faces)
    vertex_alive = np.ones(n, dtype=bool)
    parent = np.arange(n)  # union-find for provenance

    vertex_faces: list[set[int]] = [set() for _ in range(n)]
    for fi, f in enumerate(faces):
        for v in f:
            vertex_faces[v].add(fi)

    quadrics = np.zeros((n, 4, 4))
    face_area_sum = 0.0
    for f in faces:
        p0, p1, p2 = positions[f[0]], positions[f[1]], positions[f[2]]
        K = _face_quadric(p0, p1, p2)
        face_area_sum += 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0))
        for v in f:
            quadrics[v] += K

    # Boundary constraint quadrics: edges incident to exactly one face.
    if len(faces):
        mean_area = face_area_sum / len(faces)
        edge_faces: dict[tuple[int, int], list[int]] = {}
        for fi, f in enumerate(faces):
            for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                key = (a, b) if a < b else (b, a)
                edge_faces.setdefault(key, []).append(fi)
        w = boundary_weight * mean_area
        for (a, b), incident in edge_faces.items():
            if len(incident) != 1:
                continue
            f = faces[incident[0]]
            p0, p1, p2 = positions[f[0]], positions[f[1]], positions[f[2]]
            fn = np.cross(p1 - p0, p2 - p0)
            K = _boundary_quadric(positions[a], positions[b], fn, w)
            quadrics[a] += K
            quadrics[b] += K

    def find_root(v: int) -> int:
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    def neighbors(v: int) -> set[int]:
        out = set()
        for fi in vertex_faces[v]:
            out.update(faces[fi])
        out.discard(v)
        return out

    version = np.zeros(n, dtype=np.int64)
    heap: list[tuple[float, int, int, int, int, int]] = []
    counter = 0
    pending_positions: dict[int, np.ndarray] = {}

    def push_edge(a: int, b: int) -> None:
        nonlocal counter
        if a > b:
            a, b = b, a
        Q = quadrics[a] + quadrics[b]
        pos, err = _optimal_position(Q, positions[a], positions[b])
        pending_positions[counter] = pos
        heapq.heappush(heap, (err, counter, a, b, int(version[a]), int(version[b])))
        counter += 1

    for a, b in mesh.edges:
        push_edge(int(a), int(b))

    def collapse_is_valid(a: int, b: int, new_pos: np.ndarray) -> bool:
        # Link condition: common neighbors must be exactly the vertices
        # opposite the shared faces, otherwise the collapse pinches the
        # surface or duplicates a face.
        shared = vertex_faces[a] & vertex_faces[b]
        opposite = set()
        for fi in shared:
            for v in faces[fi]:
                if v != a and v != b:
                    opposite.add(v)
        if (neighbors(a) & neighbors(b)) != opposite:
            return False
        # Normal-flip rejection on every surviving incident face.
        for v, other in ((a, b), (b, a)):
            for fi in vertex_faces[v]:
                if fi in shared:
                    continue
                f = faces[fi]
                before = np.cross(
                    positions[f[1]] - positions[f[0]], positions[f[2]] - positions[f[0]]
                )
                moved = [new_pos if x == v else positions[x] for x in f]
                after = np.cross(moved[1] - moved[0], moved[2] - moved[0])
                if float(np.dot(before, after)) < 0.0:
                    return False
        return True

    alive_count = n
    stalled = False
    while alive_count > target_vertex_count:
        if not heap:
            stalled = True
            break
        err, tag, a, b, va, vb = heapq.heappop(heap)
        new_pos = pending_positions.pop(tag)
        if not (vertex_alive[a] and vertex_alive[b]):
            continue
        if version[a] != va or version[b] != vb:
            continue
        if not vertex_faces[a] & vertex_faces[b]:
            continue  # no longer an edge
        if not collapse_is_valid(a, b, new_pos):
            continue

        # Collapse b into a at the optimal position.
        positions[a] = new_pos
        quadrics[a] = quadrics[a] + quadrics[b]
        vertex_alive[b] = False
        parent[b] = a
        shared = vertex_faces[a] & vertex_faces[b]
        for fi in shared:
            face_alive[fi] = False
            for v in faces[fi]:
                vertex_faces[v].discard(fi)
        for fi in list(vertex_faces[b]):
            f = faces[fi]
            faces[fi] = tuple(a if x == b else x for x in f)
            vertex_faces[b].discard(fi)
            vertex_faces[a].add(fi)
        version[a] += 1
        version[b] += 1
        alive_count -= 1
        for u in neighbors(a):
            push_edge(a, u)

    # Compact to the output index space.
    coarse_index = np.full(n, -1, dtype=np.int64)
    coarse_index[vertex_alive] = np.arange(int(vertex_alive.sum()))
    out_vertices = positions[vertex_alive]
    out_faces = [
        tuple(int(coarse_index[v]) for v in faces[fi])
        for fi in range(len(faces))
        if face_alive[fi]
    ]
    fine_to_coarse = np.array([coarse_index[find_root(v)] for v in range(n)])
    result = TriMesh(out_vertices, np.array(out_faces, dtype=np.int64).reshape(-1, 3))
    return DecimationResult(result, VertexMap(fine_to_coarse), stalled)
