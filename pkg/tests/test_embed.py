import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graphalign.embed import (
    GnnParams,
    feat_prop_trans,
    gnn_backward,
    gnn_forward,
    init_params,
    project_columns,
    propagation_stack,
    wl_alignment,
)
from graphalign.errors import NumericalError, ShapeError
from graphalign.graph import Graph, gen_synthetic_pair, random_graph


def _path(n, feats=None):
    feats = np.eye(n) if feats is None else feats
    return Graph(n, [(i, i + 1) for i in range(n - 1)], feats)


def test_identity_pipeline_on_edgeless_graph():
    x = np.array([[1.0, 0.0], [0.5, 2.0], [0.0, 0.0]])
    g = Graph(3, np.zeros((0, 2)), x)
    params = GnnParams("gcn", 1, [np.eye(2)])
    np.testing.assert_allclose(feat_prop_trans(g, params), x)


def test_zero_transform_gives_zero_embedding():
    g = random_graph(10, d_in=3, seed=0)
    params = GnnParams("gcn", 2, [np.zeros((3, 4)), np.zeros((4, 4))])
    assert not feat_prop_trans(g, params).any()


def test_path_one_hot_single_layer():
    params = GnnParams("gcn", 1, [np.eye(3)])
    z = feat_prop_trans(_path(3), params)
    np.testing.assert_allclose(z[0], [0.5, 1 / np.sqrt(6), 0.0])


def test_gcn_is_skip_sum_of_relu_layers():
    g = random_graph(12, d_in=3, features="gaussian", seed=1)
    params = init_params("gcn", 3, dim=4, layers=3, rng=0)
    p = g.propagation.toarray()
    h, total = g.features, 0
    for w in params.mats:
        h = np.maximum(p @ h @ w, 0)
        total = total + h
    np.testing.assert_allclose(feat_prop_trans(g, params), total, rtol=1e-12)


def test_lgcn_is_single_linear_map_of_stack():
    g = random_graph(12, d_in=3, features="gaussian", seed=1)
    params = init_params("lightweight-gcn", 3, dim=5, layers=2, rng=0)
    assert params.kind == "lgcn"
    assert params.mats[0].shape == (9, 5)
    p = g.propagation.toarray()
    x = g.features
    stack = np.hstack([x, p @ x, p @ p @ x])
    np.testing.assert_allclose(propagation_stack(g, 2), stack, rtol=1e-12)
    np.testing.assert_allclose(feat_prop_trans(g, params), stack @ params.mats[0], rtol=1e-12)


def test_shape_errors():
    g = random_graph(5, d_in=3, seed=0)
    with pytest.raises(ShapeError):
        feat_prop_trans(g, init_params("gcn", 4, dim=2, layers=1))
    with pytest.raises(ShapeError):
        GnnParams("gcn", 2, [np.ones((3, 4)), np.ones((5, 4))])
    with pytest.raises(ShapeError):
        GnnParams("gcn", 2, [np.ones((3, 4))])
    with pytest.raises(ValueError):
        GnnParams("gin", 1, [np.ones((3, 4))])


def test_non_finite_output_raises():
    g = Graph(2, [(0, 1)], np.array([[np.inf], [1.0]]))
    with pytest.raises(NumericalError):
        feat_prop_trans(g, GnnParams("gcn", 1, [np.ones((1, 1))]))


@pytest.mark.parametrize("kind", ["gcn", "lgcn"])
def test_backward_matches_finite_differences(kind):
    g = random_graph(7, d_in=3, features="gaussian", avg_degree=2, seed=3)
    params = init_params(kind, 3, dim=4, layers=2, rng=1)
    # perturb away from the feasible set so ReLUs sit in both regimes
    rng = np.random.default_rng(0)
    params.mats = [w + 0.3 * rng.standard_normal(w.shape) for w in params.mats]
    weight = rng.standard_normal((7, 4))
    _, cache = gnn_forward(g, params)
    grads = gnn_backward(g, params, cache, weight)
    h = 1e-6
    for w, grad in zip(params.mats, grads):
        num = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + h
            up = np.sum(weight * feat_prop_trans(g, params))
            w[idx] = orig - h
            down = np.sum(weight * feat_prop_trans(g, params))
            w[idx] = orig
            num[idx] = (up - down) / (2 * h)
        np.testing.assert_allclose(grad, num, rtol=1e-5, atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-2, 2)))
def test_project_columns_is_feasible_and_idempotent(w):
    p = project_columns(w)
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=0), 1.0)
    np.testing.assert_allclose(project_columns(p), p, rtol=1e-15)


def test_dead_column_becomes_uniform():
    p = project_columns(np.array([[-1.0, 2.0], [-3.0, 2.0]]))
    np.testing.assert_allclose(p, [[0.5, 0.5], [0.5, 0.5]])


def test_init_params_are_feasible_and_seeded():
    a = init_params("gcn", 6, dim=8, layers=3, rng=5)
    b = init_params("gcn", 6, dim=8, layers=3, rng=5)
    assert [w.shape for w in a.mats] == [(6, 8), (8, 8), (8, 8)]
    for wa, wb in zip(a.mats, b.mats):
        np.testing.assert_array_equal(wa, wb)
        assert (wa >= 0).all()
        np.testing.assert_allclose(wa.sum(axis=0), 1.0)


def test_wl_identical_graphs_symmetric():
    g = random_graph(20, seed=2)
    t = wl_alignment(g, g, layers=3, seed=0)
    np.testing.assert_allclose(t, t.T, atol=1e-15)
    assert (t >= 0).all()
    assert t.sum() == pytest.approx(1.0, abs=1e-9)


def test_wl_singleton():
    g = Graph(1, np.zeros((0, 2)), [[1.0]])
    np.testing.assert_allclose(wl_alignment(g, g, layers=2), [[1.0]])


def test_wl_recovers_isomorphic_three_paths():
    g = _path(3)
    for seed in range(10):
        gs, gt, truth = gen_synthetic_pair(g, 0.0, 0.0, seed=seed)
        t = wl_alignment(gs, gt, layers=2, seed=seed)
        np.testing.assert_array_equal(t.argmax(axis=1), truth.pairs[:, 1])


def test_wl_deterministic_given_seed():
    g = random_graph(15, seed=0)
    h = random_graph(15, seed=1)
    np.testing.assert_array_equal(wl_alignment(g, h, seed=4), wl_alignment(g, h, seed=4))


def test_wl_permutation_equivariance():
    gs = random_graph(25, seed=3)
    gt = random_graph(25, seed=4)
    perm = np.random.default_rng(0).permutation(25)
    base = wl_alignment(gs, gt, seed=1)
    moved = wl_alignment(gs, gt.permuted(perm), seed=1)
    # node k of gt is node perm[k] of the relabelled graph
    np.testing.assert_allclose(moved[:, perm], base, rtol=0, atol=1e-12)


def test_wl_degenerate_prior_falls_back_to_uniform():
    g = Graph(3, [(0, 1)], np.zeros((3, 2)))
    with pytest.warns(RuntimeWarning):
        t = wl_alignment(g, g)
    np.testing.assert_allclose(t, np.full((3, 3), 1 / 9))


def test_wl_rejects_feature_dim_mismatch():
    with pytest.raises(ShapeError):
        wl_alignment(random_graph(5, d_in=3, seed=0), random_graph(5, d_in=4, seed=0))


def test_feature_transformation_separates_distant_nodes():
    # two nodes more than 2K hops apart share no propagated one-hot mass,
    # but a dense transformation mixes dimensions and makes them similar
    n, k = 8, 2
    g = _path(n)
    i, j = 0, 7
    identity = GnnParams("gcn", k, [np.eye(n)] * k)
    r = feat_prop_trans(g, identity)
    assert r[i] @ r[j] == 0.0
    dense = GnnParams("gcn", k, [np.full((n, n), 1.0 / n)] * k)
    z = feat_prop_trans(g, dense)
    assert z[i] @ z[j] > 0.0
