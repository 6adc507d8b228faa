"""Scikit-learn style estimators wrapping the registration pipeline.

``NonRigidRegistration`` follows the fit/transform/predict contract: fit
solves for node transforms aligning a source mesh to a target, transform
applies the fitted deformation to arbitrary points (the original source
vertices reuse their exact binding; new points are bound by knn to the
fitted graph), predict reads off nearest-target-vertex correspondences.
``QuadricDecimator`` is the mesh-in/mesh-out transformer. Both expose
``get_params``/``set_params`` so they compose with pipelines and
``sklearn.base.clone``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .binding import bind_knn
from .deform import apply_ed_points
from .losses import LossWeights
from .mesh import TriMesh
from .registration import (
    RegistrationConfig,
    correspondences_from_registration,
    register,
)
from .simplify import qem_decimate
from .validation import as_mesh, as_points


class QuadricDecimator(BaseEstimator, TransformerMixin):
    """Edge-collapse decimation to a target vertex count.

    Parameters
    ----------
    target_vertices : int
        Vertex count of the output mesh (exact unless collapses stall).
    boundary_weight : float
        Relative weight of boundary-preserving constraint quadrics.
    """

    def __init__(self, target_vertices: int = 2757, boundary_weight: float = 1000.0):
        self.target_vertices = target_vertices
        self.boundary_weight = boundary_weight

    def fit(self, X, y=None):
        as_mesh(X)
        return self

    def transform(self, X) -> TriMesh:
        mesh = as_mesh(X)
        result = qem_decimate(mesh, self.target_vertices, self.boundary_weight)
        self.vertex_map_ = result.vertex_map
        self.stalled_ = result.stalled
        return result.mesh


class NonRigidRegistration(BaseEstimator):
    """Embedded-deformation registration of a source mesh onto a target.

    Parameters mirror the solver configuration; ``random_state`` seeds the
    hierarchy construction. After ``fit(source, target)`` the learned node
    transforms live in ``graph_``, the solver record in ``report_``, and
    the deformed source vertices in ``deformed_vertices_``.
    """

    def __init__(
        self,
        num_levels: int = 4,
        binding_method: str = "trace",
        knn_k: int = 4,
        max_iters: int = 500,
        learning_rate: float = 0.001,
        cycle_iters: int | None = None,
        use_cycle: bool = True,
        lambda_edge: float = 0.005,
        lambda_lap: float = 0.005,
        lambda_arap: float = 0.005,
        beta: float = 0.01,
        convergence_tol: float = 1e-7,
        random_state: int = 0,
    ):
        self.num_levels = num_levels
        self.binding_method = binding_method
        self.knn_k = knn_k
        self.max_iters = max_iters
        self.learning_rate = learning_rate
        self.cycle_iters = cycle_iters
        self.use_cycle = use_cycle
        self.lambda_edge = lambda_edge
        self.lambda_lap = lambda_lap
        self.lambda_arap = lambda_arap
        self.beta = beta
        self.convergence_tol = convergence_tol
        self.random_state = random_state

    def _config(self) -> RegistrationConfig:
        weights = LossWeights(
            lambda_edge=self.lambda_edge,
            lambda_lap=self.lambda_lap,
            lambda_arap=self.lambda_arap,
            beta=self.beta,
            use_cycle=self.use_cycle,
        )
        return RegistrationConfig(
            weights=weights,
            max_iters=self.max_iters,
            learning_rate=self.learning_rate,
            cycle_iters=self.cycle_iters,
            rng_seed=self.random_state,
            convergence_tol=self.convergence_tol,
            num_levels=self.num_levels,
            binding_method=self.binding_method,
            knn_k=self.knn_k,
        )

    def fit(self, X, y):
        """Solve for node transforms aligning source ``X`` to target ``y``."""
        source = as_mesh(X, "source")
        target = as_mesh(y, "target")
        report = register(source, target, self._config())
        self.source_ = source
        self.target_ = target
        self.report_ = report
        self.graph_ = report.graph_forward
        self.deformed_vertices_ = report.deformed_vertices
        self.converged_ = report.converged
        return self

    def _check_fitted(self):
        if not hasattr(self, "graph_"):
            raise NotFittedError("call fit(source, target) before using this estimator")

    def transform(self, X=None):
        """Apply the fitted deformation.

        With no argument returns the deformed source vertices. A point
        array (or mesh sharing the source's surface, e.g. a higher
        resolution version of it) is deformed by binding each point to the
        fitted graph with knn.
        """
        self._check_fitted()
        if X is None:
            return self.deformed_vertices_.copy()
        mesh_input = isinstance(X, TriMesh)
        points = X.vertices if mesh_input else as_points(X)
        if (
            points.shape == self.source_.vertices.shape
            and np.array_equal(points, self.source_.vertices)
        ):
            out = self.deformed_vertices_.copy()
        else:
            k = min(self.knn_k, self.graph_.n_nodes)
            binding = bind_knn(points, self.graph_.nodes, k)
            out = apply_ed_points(points, self.graph_, binding)
        return X.with_vertices(out) if mesh_input else out

    def predict(self, X=None) -> np.ndarray:
        """Correspondence indices: nearest target vertex per deformed
        point."""
        self._check_fitted()
        deformed = self.transform(X)
        if isinstance(deformed, TriMesh):
            deformed = deformed.vertices
        return correspondences_from_registration(deformed, self.target_)

    def fit_predict(self, X, y) -> np.ndarray:
        return self.fit(X, y).predict()
