import json
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from plufg.exceptions import GraphError
from plufg.graph import (build_graph, from_scipy, gradient_laplacian, graph_divergence, graph_gradient,
                         homophily_index, node_gradient_pnorm, normalized_operators, read_edge_list,
                         spectral_radius, write_edge_list)

from conftest import edge2, path_graph, random_graph, triangle

FROZEN = json.loads((Path(__file__).parent / "data" / "frozen_oracles.json").read_text())


def test_single_edge_degrees():
    g = edge2()
    assert g.deg_raw.tolist() == [1.0, 1.0]
    assert g.deg_aug.tolist() == [2.0, 2.0]
    assert g.nnz == 2 and g.n_edges == 1


def test_triangle_degrees():
    assert triangle().deg_raw.tolist() == [2.0, 2.0, 2.0]


def test_duplicate_edges_merge_by_summation():
    g = build_graph([(0, 1, 1.0), (1, 0, 1.0)], 2)
    assert g.deg_raw.tolist() == [2.0, 2.0]
    assert g.nnz == 2


def test_triple_duplicates_stay_symmetric():
    g = build_graph([(0, 1, 0.1), (1, 0, 0.2), (0, 1, 0.7), (1, 2, 1.0)], 3)
    A = g.adjacency().toarray()
    assert np.array_equal(A, A.T)


@pytest.mark.parametrize("edges,n,msg", [
    ([(0, 1, 1.0)], 3, "node 2 is isolated"),
    ([(0, 1, -1.0)], 2, "negative"),
    ([(0, 0, 1.0), (0, 1, 1.0)], 2, "self-loop"),
    ([(0, 5, 1.0)], 2, "out of range"),
    ([], 2, "empty"),
    ([(0, 1, 0.0)], 2, "zero weight"),
])
def test_construction_errors(edges, n, msg):
    with pytest.raises(GraphError, match=msg):
        build_graph(edges, n)


def test_graph_is_immutable():
    g = triangle()
    with pytest.raises(ValueError):
        g.weights[0] = 3.0


def test_csr_columns_sorted(rng):
    g = random_graph(rng, 15)
    for i in range(g.n):
        nb = g.neighbors(i)
        assert np.all(np.diff(nb) > 0)


def test_edge_list_roundtrip(tmp_path, rng):
    g = random_graph(rng, 12)
    write_edge_list(g, tmp_path / "e.tsv")
    h = read_edge_list(tmp_path / "e.tsv", n=12)
    assert np.array_equal(g.indptr, h.indptr)
    assert np.array_equal(g.weights, h.weights)


def test_read_edge_list_comments(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("# header\n0\t1\t2.5\n1\t2\t1  # trailing\n\n")
    g = read_edge_list(p)
    assert g.n == 3 and g.deg_raw.tolist() == [2.5, 3.5, 1.0]


def test_read_edge_list_bad_line(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("0\t1\t1\t9\n")
    with pytest.raises(GraphError, match="expected"):
        read_edge_list(p)


def test_from_scipy_matches_build():
    A = sp.csr_matrix(np.array([[0, 1, 2], [1, 0, 0], [2, 0, 0]], dtype=float))
    g = from_scipy(A)
    assert g.deg_raw.tolist() == [3.0, 1.0, 2.0]
    with pytest.raises(GraphError):
        from_scipy(np.array([[0, 1.0], [2.0, 0]]))


def test_edge2_normalized_operators():
    A_hat, L = normalized_operators(edge2())
    assert np.allclose(A_hat.toarray(), 0.5)
    assert np.allclose(np.linalg.eigvalsh(L.toarray()), FROZEN["edge2_Ltilde_eigs"], atol=1e-12)


def test_triangle_spectrum_matches_dense_oracle():
    _, L = normalized_operators(triangle())
    assert np.allclose(L.toarray(), np.eye(3) - np.ones((3, 3)) / 3)
    assert np.allclose(np.linalg.eigvalsh(L.toarray()), FROZEN["triangle_Ltilde_eigs"], atol=1e-12)


def test_kernel_of_ltilde(rng):
    g = random_graph(rng, 20)
    _, L = normalized_operators(g)
    v = np.sqrt(g.deg_aug)
    assert np.linalg.norm(L @ v) <= 1e-12 * np.linalg.norm(v)


def test_raw_degree_variant_can_be_indefinite():
    # literal raw-degree normalization with self-loops added: 2-node edge gives eigenvalue -1
    _, L = normalized_operators(edge2(), degrees="raw")
    assert np.linalg.eigvalsh(L.toarray()).min() < -0.5


def test_gradient_examples():
    G = graph_gradient(edge2(), [0.0, 2.0])
    assert G.ravel().tolist() == [2.0, -2.0]
    g = triangle()
    G = graph_gradient(g, [1.0, 0.0, 0.0])
    k = int(np.flatnonzero((g.rows == 0) & (g.indices == 1))[0])
    assert G[k, 0] == pytest.approx(FROZEN["triangle_grad_01_f100"], abs=1e-15)


def test_gradient_of_constant_on_regular_graph():
    from conftest import cycle_graph
    assert np.abs(graph_gradient(cycle_graph(7), np.ones((7, 2)))).max() == 0.0


def test_divergence_examples():
    assert graph_divergence(edge2(), [2.0, -2.0]).ravel().tolist() == [4.0, -4.0]
    g = triangle()
    h = np.random.default_rng(0).normal(size=(g.nnz, 2))
    sym = h + h[g.rev]
    assert np.abs(graph_divergence(g, sym)).max() <= 1e-15


def test_divergence_shape_check():
    with pytest.raises(ValueError, match="directed edges"):
        graph_divergence(triangle(), np.zeros(5))


def test_gradient_laplacian_matches_div_grad(rng):
    g = random_graph(rng, 15)
    F = rng.normal(size=(15, 2))
    assert np.allclose(gradient_laplacian(g) @ F, -graph_divergence(g, graph_gradient(g, F)), atol=1e-12)


def test_node_gradient_pnorm():
    assert node_gradient_pnorm(edge2(), [0.0, 2.0], 2).tolist() == [2.0, 2.0]
    g = triangle()
    f = [1.0, 0.0, 0.0]
    assert np.all(node_gradient_pnorm(g, f, 1) >= node_gradient_pnorm(g, f, 2))
    assert np.all(node_gradient_pnorm(g, np.ones(3), 1.5) == 0)
    with pytest.raises(ValueError):
        node_gradient_pnorm(g, f, 0.5)


def test_homophily_examples():
    g = triangle()
    assert homophily_index(g, [0, 0, 1]) == pytest.approx(FROZEN["triangle_homophily_AAB"], abs=1e-15)
    assert homophily_index(g, [4, 4, 4]) == 1.0
    bip = build_graph([(0, 2, 1), (0, 3, 1), (1, 2, 1), (1, 3, 1)], 4)
    assert homophily_index(bip, [0, 0, 1, 1]) == 0.0
    with pytest.raises(ValueError, match="unlabeled"):
        homophily_index(g, [0, -1, 1])
    with pytest.raises(ValueError, match="unlabeled"):
        homophily_index(g, [0.0, np.nan, 1.0])


def test_spectral_radius_examples():
    _, L = normalized_operators(edge2())
    assert spectral_radius(L) == pytest.approx(1.0, abs=1e-12)
    _, L = normalized_operators(path_graph(10))
    assert spectral_radius(L) == pytest.approx(FROZEN["p10_rho"], abs=1e-8)
    K = build_graph([(i, j, 1.0) for i in range(6) for j in range(i + 1, 6)], 6)
    assert spectral_radius(normalized_operators(K)[1]) < 2.0


def test_spectral_radius_sparse_path():
    import plufg.graph as G
    _, L = normalized_operators(path_graph(40))
    dense = spectral_radius(L)
    old = G.DENSE_EIG_LIMIT
    try:
        G.DENSE_EIG_LIMIT = 10
        assert spectral_radius(L) == pytest.approx(dense, abs=1e-8)
    finally:
        G.DENSE_EIG_LIMIT = old
