"""Scalar objectives for registration and feature alignment, with analytic
gradients.

Every loss returns ``(value, gradient)`` where the gradient is taken with
respect to the quantity the optimizer moves: deformed positions for the
geometric terms, node parameters for the rigidity term, synthesized
features for the kernel two-sample term. Squared residuals are used
throughout (an unsquared toggle exists on the rigidity term); the kernel
two-sample estimator is the biased one, which keeps it nonnegative for
finite samples so the hinged variant is well defined.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .deform import DeformGraph, rot6d_jacobian
from .mesh import TriMesh, uniform_laplacian_coords
from .validation import as_feature_matrix, as_points

_SQRT2 = float(np.sqrt(2.0))
DEFAULT_SIGMAS = (1.0, _SQRT2, 2.0, 2.0 * _SQRT2, 4.0)


@dataclass(frozen=True)
class KernelConfig:
    """Multi-scale RBF kernel: sum over bandwidths of exp(-d^2 / (2 s^2))."""

    sigmas: tuple[float, ...] = DEFAULT_SIGMAS

    def __post_init__(self):
        if len(self.sigmas) == 0 or any(s <= 0 for s in self.sigmas):
            raise ValueError("kernel bandwidths must be positive")


DEFAULT_KERNEL = KernelConfig()


@dataclass
class LossWeights:
    """Balance weights of the combined objective."""

    lambda_edge: float = 0.005
    lambda_lap: float = 0.005
    lambda_arap: float = 0.005
    lambda_f: float = 0.008
    beta: float = 0.01
    use_cycle: bool = True

    def __post_init__(self):
        for name in ("lambda_edge", "lambda_lap", "lambda_arap", "lambda_f", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _nearest(query: np.ndarray, reference: np.ndarray, method: str) -> np.ndarray:
    """Index of the nearest reference point for each query point."""
    if method == "tree":
        _, idx = cKDTree(reference).query(query)
        idx = np.asarray(idx, dtype=np.int64)
        # the tree reports n when every squared distance overflows to inf;
        # any valid index keeps the (infinite) value consistent
        return np.where(idx >= len(reference), 0, idx)
    if method == "brute":
        idx = np.empty(len(query), dtype=np.int64)
        chunk = max(1, 2_000_000 // max(1, len(reference)))
        for start in range(0, len(query), chunk):
            block = query[start : start + chunk]
            d2 = ((block[:, None, :] - reference[None, :, :]) ** 2).sum(axis=2)
            idx[start : start + len(block)] = d2.argmin(axis=1)
        return idx
    raise ValueError(f"unknown nearest-neighbor method {method!r}")


def chamfer(
    a: np.ndarray, b: np.ndarray, method: str = "tree"
) -> tuple[float, np.ndarray]:
    """Symmetric squared-distance Chamfer divergence between point sets.

    ``mean_a min_b ||a - b||^2 + mean_b min_a ||b - a||^2``. The gradient
    is w.r.t. ``a`` and flows through both directional terms. ``method``
    selects the spatial-tree path or the exhaustive fallback; both produce
    identical values since the value is evaluated from matched indices.
    """
    a = as_points(a, "a")
    b = as_points(b, "b")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer requires nonempty point sets")

    idx_ab = _nearest(a, b, method)
    idx_ba = _nearest(b, a, method)
    diff_ab = a - b[idx_ab]
    diff_ba = b - a[idx_ba]
    value = float((diff_ab**2).sum() / len(a) + (diff_ba**2).sum() / len(b))

    grad = 2.0 * diff_ab / len(a)
    np.add.at(grad, idx_ba, -2.0 * diff_ba / len(b))
    return value, grad


def arap(graph: DeformGraph, squared: bool = True) -> tuple[float, np.ndarray]:
    """As-rigid-as-possible energy over directed graph edges.

    For each directed edge (i, j) the residual is
    ``R_i (g_j - g_i) + g_i + t_i - (g_j + t_j)``; the energy sums the
    squared residual norms (or plain norms when ``squared=False``). The
    gradient is w.r.t. the 9K node parameters.
    """
    k = graph.n_nodes
    grad = np.zeros((k, 9))
    if graph.edges.size == 0:
        return 0.0, grad
    R, dR = rot6d_jacobian(graph.params[:, :6])
    t = graph.translations()
    g = graph.nodes

    ii = np.concatenate([graph.edges[:, 0], graph.edges[:, 1]])
    jj = np.concatenate([graph.edges[:, 1], graph.edges[:, 0]])
    d = g[jj] - g[ii]
    # R d + g_i + t_i - g_j - t_j, grouped so identity transforms give an
    # exact zero residual
    resid = (np.einsum("mij,mj->mi", R[ii], d) - d) + (t[ii] - t[jj])

    if squared:
        value = float((resid**2).sum())
        upstream = 2.0 * resid
    else:
        norms = np.linalg.norm(resid, axis=1)
        value = float(norms.sum())
        safe = np.where(norms > 0, norms, 1.0)
        upstream = np.where(norms[:, None] > 0, resid / safe[:, None], 0.0)

    np.add.at(grad[:, 6:], ii, upstream)
    np.add.at(grad[:, 6:], jj, -upstream)
    grad_R = np.zeros((k, 3, 3))
    np.add.at(grad_R, ii, upstream[:, :, None] * d[:, None, :])
    grad[:, :6] += np.einsum("kij,kijp->kp", grad_R, dR)
    return value, grad


def edge_loss(mesh: TriMesh, deformed: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared change of edge length; gradient w.r.t. deformed
    positions.

    Edges of zero original length are skipped and reported once through a
    warning carrying the skip count.
    """
    deformed = as_points(deformed, "deformed")
    if deformed.shape != mesh.vertices.shape:
        raise ValueError("deformed positions must match the mesh vertex count")
    grad = np.zeros_like(deformed)
    if mesh.n_edges == 0:
        return 0.0, grad

    e = mesh.edges
    orig = mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]]
    new = deformed[e[:, 0]] - deformed[e[:, 1]]
    len_orig = np.linalg.norm(orig, axis=1)
    len_new = np.linalg.norm(new, axis=1)

    usable = len_orig > 0
    n_skipped = int((~usable).sum())
    if n_skipped:
        warnings.warn(f"edge_loss: skipped {n_skipped} zero-length edges", stacklevel=2)
    n_used = int(usable.sum())
    if n_used == 0:
        return 0.0, grad

    delta = np.where(usable, len_new - len_orig, 0.0)
    value = float((delta**2).sum() / n_used)
    safe_new = np.where(len_new > 0, len_new, 1.0)
    coeff = np.where(
        usable & (len_new > 0), 2.0 * delta / (n_used * safe_new), 0.0
    )
    per_edge = coeff[:, None] * new
    np.add.at(grad, e[:, 0], per_edge)
    np.add.at(grad, e[:, 1], -per_edge)
    return value, grad


def laplacian_loss(mesh: TriMesh, deformed: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared change of uniform-Laplacian differential coordinates."""
    deformed = as_points(deformed, "deformed")
    delta_orig = uniform_laplacian_coords(mesh)
    delta_new = uniform_laplacian_coords(mesh, positions=deformed)
    n = mesh.n_vertices
    resid = delta_new - delta_orig
    value = float((resid**2).sum() / n)

    upstream = 2.0 * resid / n
    grad = upstream.copy()
    degree = np.array([len(adj) for adj in mesh.vertex_adjacency], dtype=np.float64)
    scaled = upstream / degree[:, None]
    e = mesh.edges
    np.add.at(grad, e[:, 1], -scaled[e[:, 0]])
    np.add.at(grad, e[:, 0], -scaled[e[:, 1]])
    return value, grad


def cycle_loss(
    source_vertices: np.ndarray,
    forward_deformed: np.ndarray,
    cycled: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Mean squared distance from round-tripped points to their origins.

    ``cycled`` is the backward deformation applied at the forward-deformed
    points; the gradient is w.r.t. ``cycled`` (upstream composition through
    the two deformations is the caller's responsibility).
    """
    source_vertices = as_points(source_vertices, "source_vertices")
    forward_deformed = as_points(forward_deformed, "forward_deformed")
    cycled = as_points(cycled, "cycled")
    if not (len(source_vertices) == len(forward_deformed) == len(cycled)):
        raise ValueError("cycle_loss arguments must share the vertex count")
    n = len(source_vertices)
    resid = cycled - source_vertices
    return float((resid**2).sum() / n), 2.0 * resid / n


def _kernel_matrices(a: np.ndarray, b: np.ndarray, sigmas) -> tuple[np.ndarray, np.ndarray]:
    """Summed RBF kernel matrix and its 1/sigma^2-weighted counterpart."""
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    total = np.zeros_like(d2)
    weighted = np.zeros_like(d2)
    for s in sigmas:
        k = np.exp(-d2 / (2.0 * s * s))
        total += k
        weighted += k / (s * s)
    return total, weighted


def mmd(
    x: np.ndarray, y: np.ndarray, kernel: KernelConfig = DEFAULT_KERNEL
) -> tuple[float, np.ndarray]:
    """Biased maximum mean discrepancy between feature sets.

    ``E[k(x, x')] + E[k(y, y')] - 2 E[k(x, y)]`` with full means over all
    ordered pairs (diagonal included), which keeps the estimate
    nonnegative. The gradient is w.r.t. the rows of ``y``.
    """
    x = as_feature_matrix(x, "x")
    y = as_feature_matrix(y, "y")
    if x.shape[1] != y.shape[1]:
        raise ValueError(
            f"feature dimensions differ: {x.shape[1]} vs {y.shape[1]}"
        )
    n, m = len(x), len(y)
    kxx, _ = _kernel_matrices(x, x, kernel.sigmas)
    kyy, wyy = _kernel_matrices(y, y, kernel.sigmas)
    kxy, wxy = _kernel_matrices(x, y, kernel.sigmas)
    value = float(kxx.mean() + kyy.mean() - 2.0 * kxy.mean())

    # d/dy_j of exp(-|u - y_j|^2 / (2 s^2)) is k * (u - y_j) / s^2
    grad = (2.0 / (m * m)) * (wyy @ y - wyy.sum(axis=1)[:, None] * y)
    grad -= (2.0 / (n * m)) * (wxy.T @ x - wxy.sum(axis=0)[:, None] * y)
    return value, grad


def bounded_mmd(
    x: np.ndarray,
    y: np.ndarray,
    kernel: KernelConfig = DEFAULT_KERNEL,
    beta: float = 0.01,
) -> tuple[float, np.ndarray]:
    """Hinged discrepancy ``max(0, mmd - beta)``; zero gradient at or below
    the bound."""
    value, grad = mmd(x, y, kernel)
    if value > beta:
        return value - beta, grad
    return 0.0, np.zeros_like(grad)


@dataclass
class TotalLoss:
    """Combined objective value, per-term breakdown, and gradients."""

    total: float
    terms: dict[str, float]
    grad_deformed: np.ndarray
    grad_params: np.ndarray
    grad_cycled: np.ndarray | None = None
    grad_y_features: np.ndarray | None = None


def total_loss(
    mesh: TriMesh,
    deformed: np.ndarray,
    target_points: np.ndarray,
    graph: DeformGraph,
    weights: LossWeights,
    kernel: KernelConfig = DEFAULT_KERNEL,
    x_features: np.ndarray | None = None,
    y_features: np.ndarray | None = None,
    cycle_source: np.ndarray | None = None,
    cycled: np.ndarray | None = None,
    chamfer_method: str = "tree",
) -> TotalLoss:
    """Weighted sum of the alignment, smoothness, and feature terms.

    ``total = [use_cycle] * cycle + chamfer
            + lambda_edge * edge + lambda_lap * laplacian
            + lambda_arap * arap + lambda_f * feature``

    Gradients are split by argument: ``grad_deformed`` collects the
    geometric terms w.r.t. deformed positions, ``grad_params`` the rigidity
    term w.r.t. node parameters, ``grad_cycled`` and ``grad_y_features``
    the optional terms w.r.t. their direct inputs.
    """
    ch_val, ch_grad = chamfer(deformed, target_points, method=chamfer_method)
    edge_val, edge_grad = edge_loss(mesh, deformed)
    lap_val, lap_grad = laplacian_loss(mesh, deformed)
    arap_val, arap_grad = arap(graph)

    terms = {
        "chamfer": ch_val,
        "cycle": 0.0,
        "edge": edge_val,
        "laplacian": lap_val,
        "arap": arap_val,
        "feature": 0.0,
    }
    grad_deformed = ch_grad + weights.lambda_edge * edge_grad + weights.lambda_lap * lap_grad
    grad_params = weights.lambda_arap * arap_grad

    grad_cycled = None
    if weights.use_cycle and cycled is not None:
        cyc_val, cyc_grad = cycle_loss(cycle_source, deformed, cycled)
        terms["cycle"] = cyc_val
        grad_cycled = cyc_grad

    grad_y = None
    if y_features is not None:
        feat_val, feat_grad = bounded_mmd(x_features, y_features, kernel, weights.beta)
        terms["feature"] = feat_val
        grad_y = weights.lambda_f * feat_grad

    total = (
        terms["cycle"]
        + terms["chamfer"]
        + weights.lambda_edge * terms["edge"]
        + weights.lambda_lap * terms["laplacian"]
        + weights.lambda_arap * terms["arap"]
        + weights.lambda_f * terms["feature"]
    )
    return TotalLoss(
        total=float(total),
        terms=terms,
        grad_deformed=grad_deformed,
        grad_params=grad_params,
        grad_cycled=grad_cycled,
        grad_y_features=grad_y,
    )
