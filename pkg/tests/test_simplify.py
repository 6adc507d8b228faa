import numpy as np
import pytest

from edalign.mesh import TriMesh
from edalign.simplify import qem_decimate

from _oracles import hausdorff_to_mesh
from _shapes import grid_strip


def _check_mesh_sane(mesh):
    assert (mesh.faces[:, 0] != mesh.faces[:, 1]).all()
    assert (mesh.faces[:, 1] != mesh.faces[:, 2]).all()
    assert (mesh.faces[:, 0] != mesh.faces[:, 2]).all()
    if mesh.n_faces:
        assert mesh.faces.min() >= 0
        assert mesh.faces.max() < mesh.n_vertices


class TestQemDecimate:
    def test_identity_when_target_equals_count(self, tet):
        result = qem_decimate(tet, 4)
        assert result.mesh.n_vertices == 4
        assert not result.stalled
        assert np.array_equal(result.vertex_map.fine_to_coarse, np.arange(4))
        assert np.array_equal(result.mesh.vertices, tet.vertices)

    def test_target_below_four_rejected(self, tet):
        with pytest.raises(ValueError):
            qem_decimate(tet, 3)

    def test_target_above_count_rejected(self, tet):
        with pytest.raises(ValueError):
            qem_decimate(tet, 5)

    def test_icosphere_halved_stays_close(self, sphere642):
        result = qem_decimate(sphere642, 321)
        assert result.mesh.n_vertices == 321
        assert not result.stalled
        _check_mesh_sane(result.mesh)
        # Hausdorff from coarse vertices to the original surface, by
        # brute-force point-to-triangle distance
        d = hausdorff_to_mesh(result.mesh.vertices, sphere642)
        assert d < 0.02 * sphere642.bounding_box_diagonal()

    def test_vertex_map_total_and_in_range(self, sphere642):
        result = qem_decimate(sphere642, 200)
        fine_to_coarse = result.vertex_map.fine_to_coarse
        assert len(fine_to_coarse) == sphere642.n_vertices
        assert fine_to_coarse.min() >= 0
        assert fine_to_coarse.max() < result.mesh.n_vertices
        # every coarse vertex has at least one fine pre-image
        assert len(np.unique(fine_to_coarse)) == result.mesh.n_vertices

    def test_monotone_vertex_counts(self, sphere642):
        previous = sphere642
        for target in (500, 321, 100, 30):
            result = qem_decimate(previous, target)
            assert result.mesh.n_vertices == target
            _check_mesh_sane(result.mesh)
            previous = result.mesh

    def test_human_scale_paper_count(self, human_scale_mesh):
        # 6890-vertex sphere stands in for the registered human template;
        # decimation must reach exactly 2757 vertices
        assert human_scale_mesh.n_vertices == 6890
        result = qem_decimate(human_scale_mesh, 2757)
        assert result.mesh.n_vertices == 2757
        assert not result.stalled
        _check_mesh_sane(result.mesh)

    def test_open_strip_boundary_preserved(self):
        verts, faces = grid_strip(12, 5, spacing=0.5)
        mesh = TriMesh(verts, faces)
        result = qem_decimate(mesh, 20)
        assert result.mesh.n_vertices == 20
        # boundary constraint quadrics keep the footprint from collapsing
        orig_extent = verts.max(axis=0) - verts.min(axis=0)
        new_extent = result.mesh.vertices.max(axis=0) - result.mesh.vertices.min(axis=0)
        assert new_extent[0] > 0.8 * orig_extent[0]
        assert new_extent[1] > 0.8 * orig_extent[1]
