import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from _shapes import cylinder, icosphere, tetrahedron, uv_sphere  # noqa: E402


@pytest.fixture(scope="session")
def tet():
    return tetrahedron()


@pytest.fixture(scope="session")
def human_scale_mesh():
    """6890-vertex sphere standing in for a registered human template."""
    return uv_sphere(82, 84)


@pytest.fixture(scope="session")
def mesh2757(human_scale_mesh):
    from edalign.simplify import qem_decimate

    return qem_decimate(human_scale_mesh, 2757).mesh


@pytest.fixture(scope="session")
def sphere642():
    return icosphere(3)


@pytest.fixture(scope="session")
def cyl800():
    return cylinder(20, 40)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
