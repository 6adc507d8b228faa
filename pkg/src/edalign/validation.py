"""Input validation helpers shared across the package."""
from __future__ import annotations

import numpy as np

from .mesh import TriMesh


def as_points(x, name: str = "points") -> np.ndarray:
    """Coerce to a finite float64 array of shape (n, 3)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite values")
    return a


def as_feature_matrix(x, name: str = "features") -> np.ndarray:
    """Coerce to a finite float64 matrix with at least one row and column."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d matrix, got ndim={a.ndim}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be non-empty, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite values")
    return a


def as_mesh(obj, name: str = "mesh") -> TriMesh:
    """Accept a TriMesh or a (vertices, faces) pair."""
    if isinstance(obj, TriMesh):
        return obj
    try:
        vertices, faces = obj
    except (TypeError, ValueError):
        raise TypeError(f"{name} must be a TriMesh or (vertices, faces) pair") from None
    return TriMesh(vertices, faces)
