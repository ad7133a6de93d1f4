import numpy as np
import pytest

from conftest import random_tree
from mobiusgcn.linalg import max_abs, sym_eigendecompose
from mobiusgcn.skeleton import (
    DegreeError,
    SkeletonTopology,
    TopologyError,
    build_adjacency,
    decompose,
    load_topology,
    normalized_laplacian,
    parse_topology,
)


def test_default_skeleton_layout(topo):
    assert topo.num_joints == 16
    assert topo.joint_names[topo.root_index] == "Pelvis"
    assert len(topo.edges) == 15


def test_two_joint_adjacency():
    t = SkeletonTopology(("a", "b"), ((0, 1),))
    np.testing.assert_array_equal(build_adjacency(t), [[0, 1], [1, 0]])


def test_triangle_adjacency():
    t = SkeletonTopology(("a", "b", "c"), ((0, 1), (1, 2), (0, 2)))
    np.testing.assert_array_equal(build_adjacency(t), np.ones((3, 3)) - np.eye(3))


def test_default_degrees_match_edge_counts(topo):
    # count incident edges per joint straight from the edge list
    expected = np.zeros(topo.num_joints)
    for i, j in topo.edges:
        expected[i] += 1
        expected[j] += 1
    adj = build_adjacency(topo)
    np.testing.assert_array_equal(adj.sum(axis=1), expected)
    names = topo.joint_names
    assert expected[names.index("Pelvis")] == 3
    assert expected[names.index("Thorax")] == 4
    assert expected[names.index("Head")] == 1
    np.testing.assert_array_equal(adj, adj.T)
    assert np.all(np.diag(adj) == 0)


@pytest.mark.parametrize("edges", [((0, 0),), ((0, 1), (1, 0))])
def test_invalid_edges_rejected(edges):
    with pytest.raises(TopologyError):
        SkeletonTopology(("a", "b"), edges)


def test_disconnected_rejected():
    with pytest.raises(TopologyError):
        SkeletonTopology(("a", "b", "c"), ((0, 1),))


def test_laplacian_examples():
    np.testing.assert_allclose(normalized_laplacian([[0, 1], [1, 0]]), [[1, -1], [-1, 1]])
    tri = normalized_laplacian(np.ones((3, 3)) - np.eye(3))
    np.testing.assert_allclose(tri, np.eye(3) - 0.5 * (np.ones((3, 3)) - np.eye(3)), atol=1e-15)


def test_star_spectrum_by_characteristic_polynomial():
    adj = np.zeros((4, 4))
    adj[0, 1:] = adj[1:, 0] = 1
    lap = normalized_laplacian(adj)
    np.testing.assert_allclose(np.diag(lap), 1)
    np.testing.assert_allclose(lap[0, 1], -1 / np.sqrt(3))
    brute = np.sort(np.roots(np.poly(lap)).real)
    np.testing.assert_allclose(brute, [0, 1, 1, 2], atol=1e-6)
    np.testing.assert_allclose(sym_eigendecompose(lap).eigenvalues, [0, 1, 1, 2], atol=1e-12)


def test_isolated_vertex():
    with pytest.raises(DegreeError):
        normalized_laplacian(np.zeros((2, 2)))


def test_two_node_decomposition():
    dec = decompose(SkeletonTopology(("a", "b"), ((0, 1),)))
    np.testing.assert_allclose(dec.eigenvalues, [0, 2], atol=1e-14)
    u = dec.eigenvectors
    assert max_abs(u @ np.diag(dec.eigenvalues) @ u.T - dec.laplacian) < 1e-12


def test_default_decomposition(topo):
    dec = decompose(topo)
    u, lam = dec.eigenvectors, dec.eigenvalues
    assert max_abs(u @ np.diag(lam) @ u.T - dec.laplacian) < 1e-8
    assert lam[0] < 1e-9
    assert np.all(lam >= -1e-9) and np.all(lam <= 2 + 1e-9)


def test_decomposition_cached_bitwise(topo):
    a = decompose(topo)
    b = decompose(load_topology())
    assert a is b
    assert a.eigenvectors.tobytes() == b.eigenvectors.tobytes()


def test_random_trees():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 21))
        dec = decompose(random_tree(rng, n))
        lam, u = dec.eigenvalues, dec.eigenvectors
        assert np.all(lam >= -1e-9) and np.all(lam <= 2 + 1e-9)
        assert np.sum(lam < 1e-9) == 1
        assert max_abs(u @ np.diag(lam) @ u.T - dec.laplacian) < 1e-8
        assert max_abs(u.T @ u - np.eye(n)) < 1e-8


def test_relabeling_permutes_laplacian_exactly():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(2, 15))
        t = random_tree(rng, n)
        perm = rng.permutation(n)
        p = np.zeros((n, n))
        p[perm, np.arange(n)] = 1  # old k -> new perm[k]
        lap = normalized_laplacian(build_adjacency(t))
        lap_perm = normalized_laplacian(build_adjacency(t.permuted(perm)))
        np.testing.assert_array_equal(lap_perm, p @ lap @ p.T)


def test_topology_file_round_trip(topo, tmp_path):
    path = tmp_path / "skel.txt"
    path.write_text(topo.dumps())
    again = load_topology(path)
    assert again == topo
    assert again.hash() == topo.hash()


def test_topology_file_errors():
    with pytest.raises(TopologyError):
        parse_topology("root = a\njoint_names = a, b\nedges:\na c\n")
    with pytest.raises(TopologyError):
        parse_topology("joint_names = a, b\nedges:\na b\n")
    with pytest.raises(TopologyError):
        parse_topology("root = a\njoint_names = a, b, c\nedges:\na b\n")
