"""Non-rigid mesh registration toolkit.

Embedded deformation over a Graclus-coarsened mesh hierarchy, with
hierarchy-traced vertex binding, quadric-error decimation, a full loss
suite with analytic gradients, a first-order registration solver, and a
toy canonical-coordinate autoencoder. A single CLI (``edalign``) exposes
every stage.
"""

__version__ = "0.1.0"

from .binding import BindingTable, bind_knn, bind_trace_propagate, compute_weights
from .deform import (
    DeformGraph,
    SingularRotationError,
    apply_ed,
    apply_ed_points,
    ed_jacobian,
    rot6d_to_matrix,
)
from .estimators import NonRigidRegistration, QuadricDecimator
from .hierarchy import MeshHierarchy, PoolingMap, build_hierarchy, graclus_coarsen
from .losses import (
    KernelConfig,
    LossWeights,
    arap,
    bounded_mmd,
    chamfer,
    cycle_loss,
    edge_loss,
    laplacian_loss,
    mmd,
    total_loss,
)
from .mesh import OBJError, TriMesh, load_obj, parse_obj, save_obj, write_obj
from .registration import (
    DivergenceError,
    RegistrationConfig,
    RegistrationReport,
    correspondences_from_registration,
    register,
)
from .simplify import VertexMap, qem_decimate

__all__ = [
    "BindingTable",
    "DeformGraph",
    "DivergenceError",
    "KernelConfig",
    "LossWeights",
    "MeshHierarchy",
    "NonRigidRegistration",
    "OBJError",
    "PoolingMap",
    "QuadricDecimator",
    "RegistrationConfig",
    "RegistrationReport",
    "SingularRotationError",
    "TriMesh",
    "VertexMap",
    "apply_ed",
    "apply_ed_points",
    "arap",
    "bind_knn",
    "bind_trace_propagate",
    "bounded_mmd",
    "build_hierarchy",
    "chamfer",
    "compute_weights",
    "correspondences_from_registration",
    "cycle_loss",
    "ed_jacobian",
    "edge_loss",
    "graclus_coarsen",
    "laplacian_loss",
    "load_obj",
    "mmd",
    "parse_obj",
    "qem_decimate",
    "register",
    "rot6d_to_matrix",
    "save_obj",
    "total_loss",
    "write_obj",
]
