import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from softcut import diffcore as dc
from softcut.softgraph import (GraphError, NCutConfig, SoftGraphPair, build_adjacency_cosine,
                               build_adjacency_feature, build_graphs, cosine_matrix, dump_graphs,
                               ncut_loss, normalized_laplacian, orthogonality_gap)


def test_feature_adjacency_examples():
    np.testing.assert_array_equal(build_adjacency_feature(np.eye(2)), np.eye(2))
    np.testing.assert_array_equal(build_adjacency_feature(np.ones((2, 2))), [[2, 2], [2, 2]])


def test_feature_adjacency_exactly_symmetric():
    X = np.random.default_rng(0).uniform(size=(37, 11))
    A = build_adjacency_feature(X)
    assert np.array_equal(A, A.T)
    assert np.all(A >= 0)


def test_cosine_examples():
    np.testing.assert_allclose(build_adjacency_cosine([[1.0, 2.0], [1.0, 2.0]]), [[2, 2], [2, 2]], atol=1e-15)
    np.testing.assert_array_equal(build_adjacency_cosine(np.eye(2)), np.eye(2))
    np.testing.assert_allclose(cosine_matrix([[1.0, 0.0], [-1.0, 0.0]]), [[1, -1], [-1, 1]])
    np.testing.assert_allclose(build_adjacency_cosine([[1.0, 0.0], [-1.0, 0.0]]), [[2, 2], [2, 2]])


def test_cosine_zero_row_named():
    with pytest.raises(GraphError, match=r"\[1\]"):
        cosine_matrix([[1.0, 2.0], [0.0, 0.0]])


def test_laplacian_examples():
    L = normalized_laplacian([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(L, [[1, -1], [-1, 1]])
    np.testing.assert_allclose(np.linalg.eigvalsh(L), [0, 2], atol=1e-15)
    np.testing.assert_allclose(normalized_laplacian(np.eye(3)), np.zeros((3, 3)))
    L = normalized_laplacian(np.ones((3, 3)))
    np.testing.assert_allclose(L, np.eye(3) - np.ones((3, 3)) / 3, atol=1e-15)
    np.testing.assert_allclose(np.linalg.eigvalsh(L), [0, 1, 1], atol=1e-14)


def test_laplacian_zero_degree():
    with pytest.raises(GraphError, match="zero degree"):
        normalized_laplacian([[0.0, 0.0], [0.0, 1.0]])
    with pytest.raises(GraphError):
        normalized_laplacian(np.ones((2, 3)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(0.01, 5.0)))
def test_laplacian_spectrum_property(M):
    A = M + M.T
    ev = np.linalg.eigvalsh(normalized_laplacian(A))
    assert ev.min() >= -1e-8 and ev.max() <= 2 + 1e-8
    assert ev.min() <= 1e-8


def test_build_graphs_properties():
    X = np.random.default_rng(1).uniform(size=(25, 8))
    g = build_graphs(X)
    for A in (g.A1, g.A2):
        assert np.array_equal(A, A.T) and np.all(A >= 0)
    assert np.all(g.D1 > 0) and np.all(g.D2 > 0)
    for L in (g.L1, g.L2):
        ev = np.linalg.eigvalsh(L)
        assert ev.min() >= -1e-8 and ev.max() <= 2 + 1e-8
    np.testing.assert_allclose(g.mixed_laplacian(0.7), 0.7 * g.L1 + 0.3 * g.L2)


def test_build_graphs_cap():
    with pytest.raises(GraphError, match="cap"):
        build_graphs(np.ones((5, 2)), max_cells=4)


def _pair(L):
    n = L.shape[0]
    one = np.ones((n, n))
    return SoftGraphPair(one, one, np.full(n, n), np.full(n, n), L, L)


def _orthonormal(n, d, seed=0):
    q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(n, d)))
    return q


def test_ncut_examples():
    Z = _orthonormal(6, 3)
    assert dc.forward(ncut_loss(Z, _pair(np.zeros((6, 6))), NCutConfig(0.7, 15))) == pytest.approx(0, abs=1e-12)
    assert dc.forward(ncut_loss(Z, _pair(np.eye(6)), NCutConfig(0.7, 15))) == pytest.approx(3, abs=1e-12)
    assert dc.forward(ncut_loss(2 * Z, _pair(np.zeros((6, 6))), NCutConfig(0.7, 1))) == pytest.approx(27, abs=1e-11)


def test_ncut_size_mismatch():
    with pytest.raises(dc.ShapeError):
        ncut_loss(np.ones((4, 2)), _pair(np.eye(5)), NCutConfig())


def test_ncut_config_validation():
    with pytest.raises(ValueError):
        NCutConfig(alpha=1.5)
    with pytest.raises(ValueError):
        NCutConfig(beta=-1)


def test_ncut_gradient_fd():
    rng = np.random.default_rng(3)
    g = build_graphs(rng.uniform(size=(9, 4)))
    Z0 = rng.normal(size=(9, 3)) * 0.3
    cfg = NCutConfig(0.7, 15)
    assert dc.finite_difference_check(lambda z: ncut_loss(z, g, cfg), Z0) <= 1e-5


def test_orthogonality_gap():
    assert orthogonality_gap(_orthonormal(5, 2)) == pytest.approx(0, abs=1e-24)
    assert orthogonality_gap(2 * _orthonormal(5, 2)) == pytest.approx(18)


def test_dump_graphs(tmp_path):
    g = build_graphs(np.random.default_rng(2).uniform(size=(4, 3)))
    paths = dump_graphs(g, tmp_path / "g")
    assert [p.name for p in paths] == ["A1.csv", "A2.csv", "L1.csv", "L2.csv"]
    np.testing.assert_array_equal(np.loadtxt(paths[2], delimiter=","), g.L1)
