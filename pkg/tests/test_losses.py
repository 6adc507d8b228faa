import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edalign.deform import IDENTITY_PARAMS, DeformGraph
from edalign.losses import (
    DEFAULT_KERNEL,
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
from edalign.mesh import TriMesh

from _oracles import brute_chamfer, finite_difference, rbf_mmd_direct, relative_error
from _shapes import random_rotation, tetrahedron


class TestChamfer:
    def test_identical_sets_zero(self, rng):
        a = rng.normal(size=(20, 3))
        value, grad = chamfer(a, a.copy())
        assert value == 0.0
        assert np.abs(grad).max() == 0.0

    def test_single_pair_hand_value(self):
        value, _ = chamfer(np.zeros((1, 3)), np.array([[1.0, 0, 0]]))
        assert value == 2.0  # 1 forward + 1 backward

    def test_tree_equals_brute(self, rng):
        for _ in range(20):
            a = rng.normal(size=(rng.integers(1, 64), 3))
            b = rng.normal(size=(rng.integers(1, 64), 3))
            v_tree, g_tree = chamfer(a, b, method="tree")
            v_brute, g_brute = chamfer(a, b, method="brute")
            assert v_tree == v_brute
            assert np.array_equal(g_tree, g_brute)

    def test_matches_loop_oracle(self, rng):
        a = rng.normal(size=(15, 3))
        b = rng.normal(size=(11, 3))
        value, _ = chamfer(a, b)
        assert abs(value - brute_chamfer(a, b)) < 1e-12

    def test_symmetry(self, rng):
        a = rng.normal(size=(9, 3))
        b = rng.normal(size=(14, 3))
        assert abs(chamfer(a, b)[0] - chamfer(b, a)[0]) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            chamfer(np.zeros((0, 3)), np.zeros((1, 3)))

    def test_gradient_finite_difference(self, rng):
        a = rng.normal(size=(10, 3))
        b = rng.normal(size=(8, 3))
        _, grad = chamfer(a, b)
        fd = finite_difference(lambda x: chamfer(x, b)[0], a)
        assert relative_error(grad, fd) < 1e-5


class TestArap:
    def test_identity_zero(self, rng):
        nodes = rng.normal(size=(4, 3))
        graph = DeformGraph(nodes=nodes, edges=np.array([[0, 1], [1, 2], [2, 3]]))
        value, grad = arap(graph)
        assert value == 0.0
        assert np.abs(grad).max() < 1e-12

    def test_common_translation_zero(self, rng):
        nodes = rng.normal(size=(3, 3))
        params = np.tile(IDENTITY_PARAMS, (3, 1))
        params[:, 6:] = [0.7, -0.2, 1.5]
        graph = DeformGraph(nodes=nodes, edges=np.array([[0, 1], [1, 2]]), params=params)
        value, _ = arap(graph)
        assert value < 1e-28

    def test_hand_case_two_nodes(self):
        params = np.tile(IDENTITY_PARAMS, (2, 1))
        params[0, 6:] = [1.0, 0.0, 0.0]
        graph = DeformGraph(
            nodes=np.array([[0.0, 0, 0], [1.0, 0, 0]]),
            edges=np.array([[0, 1]]),
            params=params,
        )
        value, _ = arap(graph)
        assert abs(value - 2.0) < 1e-15  # both directed edges contribute 1

    def test_rigid_motion_zero(self, rng):
        # consistent rigid params per the equivariance construction
        nodes = rng.normal(size=(4, 3))
        R = random_rotation(rng)
        t = rng.normal(size=3)
        params = np.zeros((4, 9))
        params[:, :6] = np.concatenate([R[0], R[1]])
        params[:, 6:] = nodes @ R.T + t - nodes
        graph = DeformGraph(nodes=nodes, edges=np.array([[0, 1], [1, 2], [2, 3]]), params=params)
        value, _ = arap(graph)
        assert value < 1e-25

    def test_gradient_finite_difference(self, rng):
        nodes = rng.normal(size=(4, 3))
        params = np.tile(IDENTITY_PARAMS, (4, 1)) + 0.2 * rng.normal(size=(4, 9))
        graph = DeformGraph(nodes=nodes, edges=np.array([[0, 1], [1, 2], [2, 3], [0, 3]]), params=params)
        _, grad = arap(graph)
        fd = finite_difference(
            lambda p: arap(graph.with_params(p.reshape(-1, 9)))[0], graph.params
        )
        assert relative_error(grad, fd.reshape(-1, 9)) < 1e-5

    def test_unsquared_variant(self):
        params = np.tile(IDENTITY_PARAMS, (2, 1))
        params[0, 6:] = [2.0, 0.0, 0.0]
        graph = DeformGraph(
            nodes=np.array([[0.0, 0, 0], [1.0, 0, 0]]),
            edges=np.array([[0, 1]]),
            params=params,
        )
        assert abs(arap(graph, squared=False)[0] - 4.0) < 1e-14
        assert abs(arap(graph, squared=True)[0] - 8.0) < 1e-14


class TestEdgeLoss:
    def test_identity_zero(self, tet):
        value, grad = edge_loss(tet, tet.vertices)
        assert value == 0.0
        assert np.abs(grad).max() == 0.0

    def test_rigid_motion_zero(self, tet, rng):
        R = random_rotation(rng)
        value, _ = edge_loss(tet, tet.vertices @ R.T + rng.normal(size=3))
        assert value < 1e-28

    def test_uniform_scale_unit_triangle(self):
        # equilateral unit-edge triangle scaled by 2: every edge grows by 1
        v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.5, np.sqrt(3) / 2, 0]])
        mesh = TriMesh(v, [[0, 1, 2]])
        value, _ = edge_loss(mesh, 2.0 * v)
        assert abs(value - 1.0) < 1e-12

    def test_zero_length_edge_warns_and_skips(self):
        v = np.array([[0.0, 0, 0], [0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0]])
        mesh = TriMesh(v, [[0, 1, 2], [0, 1, 3], [1, 2, 3]])
        with pytest.warns(UserWarning, match="1 zero-length"):
            value, _ = edge_loss(mesh, v)
        assert value == 0.0

    def test_gradient_finite_difference(self, tet, rng):
        deformed = tet.vertices + 0.3 * rng.normal(size=(4, 3))
        _, grad = edge_loss(tet, deformed)
        fd = finite_difference(lambda x: edge_loss(tet, x)[0], deformed)
        assert relative_error(grad, fd) < 1e-5


class TestLaplacianLoss:
    def test_identity_zero(self, tet):
        assert laplacian_loss(tet, tet.vertices)[0] == 0.0

    def test_translation_invariant(self, tet):
        value, _ = laplacian_loss(tet, tet.vertices + [3.0, -2.0, 0.5])
        assert value < 1e-28

    def test_rotation_hand_value(self, tet, rng):
        from edalign.mesh import uniform_laplacian_coords

        R = random_rotation(rng)
        delta = uniform_laplacian_coords(tet)
        expected = float((((delta @ R.T) - delta) ** 2).sum() / tet.n_vertices)
        value, _ = laplacian_loss(tet, tet.vertices @ R.T)
        assert abs(value - expected) < 1e-12

    def test_gradient_finite_difference(self, tet, rng):
        deformed = tet.vertices + 0.3 * rng.normal(size=(4, 3))
        _, grad = laplacian_loss(tet, deformed)
        fd = finite_difference(lambda x: laplacian_loss(tet, x)[0], deformed)
        assert relative_error(grad, fd) < 1e-5


class TestCycleLoss:
    def test_identity_both_ways(self, rng):
        p = rng.normal(size=(7, 3))
        value, grad = cycle_loss(p, p, p)
        assert value == 0.0
        assert np.abs(grad).max() == 0.0

    def test_exact_inverse(self, rng):
        p = rng.normal(size=(7, 3))
        forward = p + [1.0, 0, 0]
        value, _ = cycle_loss(p, forward, forward - [1.0, 0, 0])
        assert value < 1e-30  # round-trip leaves only rounding residue

    def test_forward_only_unit_translation(self, rng):
        p = rng.normal(size=(7, 3))
        forward = p + [1.0, 0, 0]
        value, _ = cycle_loss(p, forward, forward)
        assert abs(value - 1.0) < 1e-12

    def test_length_mismatch(self, rng):
        p = rng.normal(size=(7, 3))
        with pytest.raises(ValueError):
            cycle_loss(p, p, p[:5])

    def test_gradient_finite_difference(self, rng):
        p = rng.normal(size=(6, 3))
        cycled = rng.normal(size=(6, 3))
        _, grad = cycle_loss(p, p, cycled)
        fd = finite_difference(lambda x: cycle_loss(p, p, x)[0], cycled)
        assert relative_error(grad, fd) < 1e-5


class TestMmd:
    def test_identical_multisets_zero(self, rng):
        x = rng.normal(size=(16, 5))
        value, _ = mmd(x, x.copy())
        assert abs(value) <= 1e-12

    def test_single_pair_closed_form(self):
        # x = {0}, y = {p} with |p|^2 = 2: value is
        # 2 * (5 - sum_i exp(-1 / sigma_i^2)), by direct summation
        p = np.array([[1.0, 1.0]])
        value, _ = mmd(np.zeros((1, 2)), p)
        expected = 2.0 * (5.0 - sum(math.exp(-1.0 / (s * s)) for s in DEFAULT_KERNEL.sigmas))
        assert abs(value - expected) < 1e-10
        assert abs(value - 2.8497583012928958) < 1e-10  # frozen oracle value

    def test_matches_direct_summation(self, rng):
        x = rng.normal(size=(9, 4))
        y = rng.normal(size=(7, 4))
        value, _ = mmd(x, y)
        assert abs(value - rbf_mmd_direct(x, y, DEFAULT_KERNEL.sigmas)) < 1e-10

    def test_symmetry(self, rng):
        x = rng.normal(size=(8, 4))
        y = rng.normal(size=(12, 4))
        assert abs(mmd(x, y)[0] - mmd(y, x)[0]) < 1e-12

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            mmd(rng.normal(size=(4, 3)), rng.normal(size=(4, 5)))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_nonnegative(self, seed):
        r = np.random.default_rng(seed)
        x = r.normal(size=(int(r.integers(1, 12)), 3))
        y = r.normal(size=(int(r.integers(1, 12)), 3))
        assert mmd(x, y)[0] >= -1e-14

    def test_gradient_finite_difference(self, rng):
        x = rng.normal(size=(32, 8))
        y = rng.normal(size=(32, 8))
        _, grad = mmd(x, y)
        fd = finite_difference(lambda v: mmd(x, v)[0], y)
        assert relative_error(grad, fd) < 1e-5


class TestBoundedMmd:
    def test_identical_sets_zero_with_zero_grad(self, rng):
        x = rng.normal(size=(10, 4))
        value, grad = bounded_mmd(x, x.copy(), beta=0.01)
        assert value == 0.0
        assert np.abs(grad).max() == 0.0

    def test_above_bound_subtracts_beta(self, rng):
        x = rng.normal(size=(6, 3))
        y = rng.normal(size=(6, 3)) + 5.0
        raw, raw_grad = mmd(x, y)
        assert raw > 0.01
        value, grad = bounded_mmd(x, y, beta=0.01)
        assert abs(value - (raw - 0.01)) < 1e-15
        assert np.array_equal(grad, raw_grad)

    def test_at_bound_exactly_zero(self, rng):
        x = rng.normal(size=(6, 3))
        y = rng.normal(size=(6, 3)) + 5.0
        raw, _ = mmd(x, y)
        value, grad = bounded_mmd(x, y, beta=raw)
        assert value == 0.0
        assert np.abs(grad).max() == 0.0

    def test_never_exceeds_raw(self, rng):
        for _ in range(10):
            x = rng.normal(size=(5, 3))
            y = rng.normal(size=(5, 3))
            raw, _ = mmd(x, y)
            bounded, _ = bounded_mmd(x, y)
            assert bounded <= raw


class TestTotalLoss:
    def _setup(self, rng, deformed=None):
        mesh = tetrahedron()
        nodes = rng.normal(size=(3, 3))
        graph = DeformGraph(
            nodes=nodes,
            edges=np.array([[0, 1], [1, 2]]),
            params=np.tile(IDENTITY_PARAMS, (3, 1)) + 0.1 * rng.normal(size=(3, 9)),
        )
        target = rng.normal(size=(6, 3))
        if deformed is None:
            deformed = mesh.vertices + 0.2 * rng.normal(size=(4, 3))
        return mesh, deformed, target, graph

    def test_identity_of_identical_meshes_zero(self, rng):
        mesh = tetrahedron()
        graph = DeformGraph(
            nodes=rng.normal(size=(3, 3)), edges=np.array([[0, 1]])
        )
        out = total_loss(mesh, mesh.vertices, mesh.vertices, graph, LossWeights())
        assert out.total == 0.0

    def test_only_arap_weight(self, rng):
        mesh, deformed, target, graph = self._setup(rng)
        weights = LossWeights(lambda_edge=0.0, lambda_lap=0.0, lambda_arap=0.7)
        out = total_loss(mesh, mesh.vertices, mesh.vertices, graph, weights)
        arap_value, _ = arap(graph)
        assert abs(out.total - 0.7 * arap_value) < 1e-12

    def test_sum_of_parts_oracle(self, rng):
        mesh, deformed, target, graph = self._setup(rng)
        weights = LossWeights()
        x_feat = rng.normal(size=(5, 4))
        y_feat = rng.normal(size=(5, 4)) + 1.0
        cycled = deformed + 0.1 * rng.normal(size=deformed.shape)
        out = total_loss(
            mesh,
            deformed,
            target,
            graph,
            weights,
            x_features=x_feat,
            y_features=y_feat,
            cycle_source=mesh.vertices,
            cycled=cycled,
        )
        expected = (
            cycle_loss(mesh.vertices, deformed, cycled)[0]
            + chamfer(deformed, target)[0]
            + weights.lambda_edge * edge_loss(mesh, deformed)[0]
            + weights.lambda_lap * laplacian_loss(mesh, deformed)[0]
            + weights.lambda_arap * arap(graph)[0]
            + weights.lambda_f * bounded_mmd(x_feat, y_feat, beta=weights.beta)[0]
        )
        assert abs(out.total - expected) < 1e-12

    def test_grad_deformed_composes(self, rng):
        mesh, deformed, target, graph = self._setup(rng)
        weights = LossWeights(use_cycle=False)
        out = total_loss(mesh, deformed, target, graph, weights)

        def f(x):
            return total_loss(mesh, x, target, graph, weights).total

        fd = finite_difference(f, deformed)
        assert relative_error(out.grad_deformed, fd) < 1e-5

    def test_grad_params_composes(self, rng):
        mesh, deformed, target, graph = self._setup(rng)
        weights = LossWeights(use_cycle=False)
        out = total_loss(mesh, deformed, target, graph, weights)

        def f(p):
            return total_loss(
                mesh, deformed, target, graph.with_params(p.reshape(-1, 9)), weights
            ).total

        fd = finite_difference(f, graph.params)
        assert relative_error(out.grad_params, fd.reshape(-1, 9)) < 1e-5


class TestKernelConfig:
    def test_default_bandwidths(self):
        assert np.allclose(
            DEFAULT_KERNEL.sigmas, [1, np.sqrt(2), 2, 2 * np.sqrt(2), 4]
        )

    def test_positive_required(self):
        with pytest.raises(ValueError):
            KernelConfig(sigmas=(1.0, 0.0))


class TestLossWeights:
    def test_defaults(self):
        w = LossWeights()
        assert w.lambda_edge == 0.005
        assert w.lambda_lap == 0.005
        assert w.lambda_arap == 0.005
        assert w.lambda_f == 0.008
        assert w.beta == 0.01
        assert w.use_cycle

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_arap=-1.0)
