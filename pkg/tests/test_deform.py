import numpy as np
import pytest

from edalign.binding import BindingTable, bind_knn
from edalign.deform import (
    IDENTITY_PARAMS,
    DeformGraph,
    SingularRotationError,
    apply_ed,
    apply_ed_points,
    ed_backward,
    ed_jacobian,
    read_transforms,
    rot6d_to_matrix,
    write_transforms,
)
from edalign.mesh import TriMesh

from _oracles import finite_difference, relative_error
from _shapes import random_rotation, rot_z


def random_graph_and_binding(rng, n_points=8, n_nodes=4):
    points = rng.normal(size=(n_points, 3))
    nodes = rng.normal(size=(n_nodes, 3))
    edges = np.array([[i, i + 1] for i in range(n_nodes - 1)])
    params = np.tile(IDENTITY_PARAMS, (n_nodes, 1)) + 0.3 * rng.normal(size=(n_nodes, 9))
    graph = DeformGraph(nodes=nodes, edges=edges, params=params)
    binding = bind_knn(points, nodes, k=min(3, n_nodes))
    return points, graph, binding


class TestRot6d:
    def test_canonical_basis_identity(self):
        assert np.array_equal(rot6d_to_matrix([1, 0, 0, 0, 1, 0]), np.eye(3))

    def test_scale_invariance(self):
        assert np.allclose(rot6d_to_matrix([2, 0, 0, 0, 5, 0]), np.eye(3), atol=1e-15)

    def test_round_trip_random_rotations(self, rng):
        for _ in range(200):
            R = random_rotation(rng)
            r6 = np.concatenate([R[0], R[1]])
            assert np.abs(rot6d_to_matrix(r6) - R).max() < 1e-12

    def test_special_orthogonal(self, rng):
        r = rng.normal(size=(50, 6))
        R = rot6d_to_matrix(r)
        for m in R:
            assert np.abs(m.T @ m - np.eye(3)).max() < 1e-10
            assert abs(np.linalg.det(m) - 1.0) < 1e-10

    def test_degenerate_zero_vector(self):
        with pytest.raises(SingularRotationError):
            rot6d_to_matrix([0, 0, 0, 0, 1, 0])

    def test_degenerate_parallel_vectors(self):
        with pytest.raises(SingularRotationError):
            rot6d_to_matrix([1, 0, 0, 2, 0, 0])


class TestApplyEd:
    def test_identity_reproduces_input(self, rng):
        points, graph, binding = random_graph_and_binding(rng)
        graph = graph.with_params(np.tile(IDENTITY_PARAMS, (graph.n_nodes, 1)))
        out = apply_ed_points(points, graph, binding)
        assert np.abs(out - points).max() < 1e-14

    def test_single_control_translation(self, rng):
        points = rng.normal(size=(5, 3))
        nodes = np.array([[0.0, 0.0, 0.0]])
        params = np.array([[1, 0, 0, 0, 1, 0, 1.0, 0.0, 0.0]])
        graph = DeformGraph(nodes=nodes, edges=np.empty((0, 2), int), params=params)
        binding = BindingTable(
            controls=[np.array([0])] * 5, weights=[np.array([1.0])] * 5, n_nodes=1
        )
        out = apply_ed_points(points, graph, binding)
        assert np.allclose(out, points + [1, 0, 0], atol=1e-15)

    def test_hand_evaluated_blend(self):
        # two nodes at the origin, one rotating 90 deg about z, one
        # identity, blended 50/50 on v = (1, 0, 0):
        # v' = 0.5*(0,1,0) + 0.5*(1,0,0) = (0.5, 0.5, 0)
        Rz = rot_z(np.pi / 2)
        params = np.array(
            [
                np.concatenate([Rz[0], Rz[1], np.zeros(3)]),
                IDENTITY_PARAMS,
            ]
        )
        graph = DeformGraph(
            nodes=np.zeros((2, 3)), edges=np.array([[0, 1]]), params=params
        )
        binding = BindingTable(
            controls=[np.array([0, 1])], weights=[np.array([0.5, 0.5])], n_nodes=2
        )
        out = apply_ed_points(np.array([[1.0, 0.0, 0.0]]), graph, binding)
        assert np.allclose(out, [[0.5, 0.5, 0.0]], atol=1e-15)

    def test_rigid_equivariance(self, rng):
        # same rigid motion on every node moves every vertex rigidly
        points, graph, binding = random_graph_and_binding(rng)
        R = random_rotation(rng)
        t = rng.normal(size=3)
        params = np.zeros((graph.n_nodes, 9))
        for i, g in enumerate(graph.nodes):
            params[i, :6] = np.concatenate([R[0], R[1]])
            params[i, 6:] = R @ g + t - g
        graph = graph.with_params(params)
        out = apply_ed_points(points, graph, binding)
        assert np.abs(out - (points @ R.T + t)).max() < 1e-10

    def test_mesh_wrapper(self, rng):
        points, graph, binding = random_graph_and_binding(rng, n_points=6)
        mesh = TriMesh(points, [[0, 1, 2], [3, 4, 5]])
        assert np.array_equal(
            apply_ed(mesh, graph, binding), apply_ed_points(points, graph, binding)
        )


class TestEdJacobian:
    def test_translation_block(self, rng):
        points, graph, binding = random_graph_and_binding(rng, n_points=4, n_nodes=2)
        mesh = TriMesh(points, [[0, 1, 2]])
        J = ed_jacobian(mesh, graph, binding).toarray()
        vert, node, w = binding.flat()
        for m in range(len(vert)):
            block = J[3 * vert[m] : 3 * vert[m] + 3, 9 * node[m] + 6 : 9 * node[m] + 9]
            assert np.allclose(block, w[m] * np.eye(3), atol=1e-14)

    def test_unbound_blocks_zero(self, rng):
        points, graph, binding = random_graph_and_binding(rng, n_points=6, n_nodes=4)
        mesh = TriMesh(points, [[0, 1, 2]])
        J = ed_jacobian(mesh, graph, binding).toarray()
        bound = {(int(v), int(n)) for v, n in zip(*binding.flat()[:2])}
        for j in range(6):
            for i in range(4):
                if (j, i) not in bound:
                    block = J[3 * j : 3 * j + 3, 9 * i : 9 * i + 9]
                    assert np.abs(block).max() == 0.0

    def test_matches_finite_differences(self, rng):
        points, graph, binding = random_graph_and_binding(rng)
        mesh = TriMesh(points, [[0, 1, 2]])
        J = ed_jacobian(mesh, graph, binding).toarray()
        flat0 = graph.params.ravel()

        for out_dim in range(J.shape[0]):
            j, d = divmod(out_dim, 3)

            def f(flat):
                g = graph.with_params(flat.reshape(-1, 9))
                return apply_ed_points(points, g, binding)[j, d]

            fd_row = finite_difference(f, flat0)
            assert relative_error(J[out_dim], fd_row) < 1e-5

    def test_backward_is_jacobian_transpose(self, rng):
        points, graph, binding = random_graph_and_binding(rng)
        mesh = TriMesh(points, [[0, 1, 2]])
        J = ed_jacobian(mesh, graph, binding)
        upstream = rng.normal(size=points.shape)
        _, grad_params = ed_backward(points, graph, binding, upstream)
        ref = (J.T @ upstream.ravel()).reshape(-1, 9)
        assert np.abs(grad_params - ref).max() < 1e-12

    def test_degenerate_rotation_raises(self, rng):
        points, graph, binding = random_graph_and_binding(rng)
        params = graph.params.copy()
        params[0, :3] = 0.0
        with pytest.raises(SingularRotationError):
            ed_jacobian(TriMesh(points, [[0, 1, 2]]), graph.with_params(params), binding)


class TestTransformsIO:
    def test_round_trip(self, rng):
        params = rng.normal(size=(5, 9))
        text = write_transforms(params)
        again = read_transforms(text)
        assert np.array_equal(again, params)

    def test_comments_and_blanks_skipped(self):
        text = "# header\n\n1 0 0 0 1 0 0 0 0  # identity\n"
        assert read_transforms(text).shape == (1, 9)

    def test_wrong_arity_reports_line(self):
        with pytest.raises(ValueError, match="line 2"):
            read_transforms("1 0 0 0 1 0 0 0 0\n1 2 3\n")
