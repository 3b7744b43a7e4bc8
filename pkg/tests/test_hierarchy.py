import math

import numpy as np
import pytest

from conftest import random_superpixels
from oracles import gconv_oracle, matmul_oracle, soft_em_oracle

from hiergraph import errors
from hiergraph.autodiff import value_of
from hiergraph.graphs import BOTTOM_UP, AssignmentMatrix, HierarchyConfig, LevelGraph
from hiergraph.hierarchy import (
    build_hierarchy,
    cumulative_assignment,
    em_pool,
    init_base_graph,
    project_features,
    readout,
)
from hiergraph.message_passing import GConvParams
from hiergraph.params import init_model_params
from hiergraph.superpixel import build_rag, superpixel_pool
from hiergraph.tensor_io import validate_label_map


def graph_of(v, e=None):
    v = np.asarray(v, dtype=np.float64)
    e = np.zeros((len(v), len(v))) if e is None else e
    return LevelGraph(level=1, vertices=v, adjacency=e)


def pad_to(v, d):
    out = np.zeros((len(v), d))
    out[:, 0] = v
    return out


# --- init_base_graph ---

def test_init_constant_unit_rows(quad_sp):
    f = np.ones((3, 8, 8))
    rag = build_rag(quad_sp)
    g = init_base_graph(f, quad_sp, rag, np.eye(3))
    v = value_of(g.vertices)
    assert np.allclose(v, v[0])
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0)
    assert np.array_equal(g.adjacency, rag.matrix)


def test_init_single_region():
    sp = validate_label_map(np.zeros((4, 4), np.int32))
    g = init_base_graph(np.ones((2, 4, 4)), sp, build_rag(sp), np.eye(2))
    assert g.num_vertices == 1
    assert g.adjacency.shape == (1, 1) and g.adjacency[0, 0] == 0


def test_init_matches_composition_oracle(rng, quad_sp):
    f = rng.normal(size=(5, 8, 8))
    w = rng.normal(size=(5, 3))
    g = init_base_graph(f, quad_sp, build_rag(quad_sp), w)
    pooled = superpixel_pool(f, quad_sp).features
    expected = pooled @ w
    norms = np.linalg.norm(expected, axis=1, keepdims=True)
    expected = expected / np.where(norms > 0, norms, 1.0)
    assert np.allclose(value_of(g.vertices), expected, atol=1e-12)


def test_init_dimension_mismatch(quad_sp):
    with pytest.raises(errors.DimensionMismatch):
        init_base_graph(np.ones((4, 8, 8)), quad_sp, build_rag(quad_sp), np.eye(3))


# --- em_pool ---

def test_em_single_vertex_fixed_point():
    g = graph_of([[1.0, 2.0]])
    centers, p, e_next = em_pool(g, 1, 3, 1.0)
    assert p.values.tolist() == [[1.0]]
    assert np.allclose(value_of(centers), [[1.0, 2.0]])
    assert e_next.shape == (1, 1) and e_next[0, 0] == 0


def test_em_identical_rows():
    v = np.tile([0.3, -0.4], (5, 1))
    centers, p, _ = em_pool(graph_of(v), 2, 4, 1.0)
    assert np.allclose(value_of(centers), v[0])
    assert np.allclose(p.values.sum(axis=0), 1.0)


def test_em_matches_soft_em_oracle():
    raw = np.array([0.0, 0.1, 10.0, 10.1])
    v = pad_to(raw, 3)
    centers, p, _ = em_pool(graph_of(v), 2, 5, 1.0, init="stride")
    idx = (np.arange(2) * 4) // 2  # stride picks rows 0 and 2
    oc, op = soft_em_oracle(v, idx, 5, 1.0)
    assert np.allclose(value_of(centers), oc, atol=1e-6)
    assert np.allclose(p.values, op, atol=1e-6)
    hard = np.argmax(p.values, axis=1)
    assert hard.tolist() == [0, 0, 1, 1]


def test_em_errors():
    g = graph_of(np.zeros((3, 2)))
    with pytest.raises(errors.InvalidM):
        em_pool(g, 4, 1, 1.0)
    with pytest.raises(errors.InvalidM):
        em_pool(g, 0, 1, 1.0)


def test_em_random_init_deterministic(rng):
    v = rng.normal(size=(10, 4))
    a = em_pool(graph_of(v), 4, 3, 1.0, init="random", seed=9)
    b = em_pool(graph_of(v), 4, 3, 1.0, init="random", seed=9)
    assert np.array_equal(a[1].values, b[1].values)


def test_em_translation_invariance(rng):
    v = rng.normal(size=(8, 3))
    shift = np.array([5.0, -2.0, 3.0])
    _, p1, _ = em_pool(graph_of(v), 3, 4, 1.0)
    _, p2, _ = em_pool(graph_of(v + shift), 3, 4, 1.0)
    assert np.allclose(p1.values, p2.values, atol=1e-9)


def test_em_sigma_scaling(rng):
    v = rng.normal(size=(7, 3))
    _, p1, _ = em_pool(graph_of(v), 3, 3, 2.0)
    _, p2, _ = em_pool(graph_of(v / 2.0), 3, 3, 1.0)
    assert np.allclose(p1.values, p2.values, atol=1e-12)


def test_em_permutation_equivariance(rng):
    v = rng.normal(size=(6, 3))
    perm = rng.permutation(6)
    idx = np.array([0, 3])
    _, p1, _ = em_pool(graph_of(v), 2, 3, 1.0, init="stride")
    # stride indices 0 and 3 expressed in the permuted ordering
    vp = v[perm]
    inv = np.argsort(perm)
    g2 = graph_of(vp)
    from hiergraph import hierarchy as hmod

    old = hmod._init_indices
    try:
        hmod._init_indices = lambda n, m, strategy, seed: inv[idx]
        _, p2, _ = em_pool(g2, 2, 3, 1.0, init="stride")
    finally:
        hmod._init_indices = old
    assert np.allclose(p2.values, p1.values[perm], atol=1e-12)


def test_em_pooled_adjacency_symmetric_nonneg(rng):
    sp = random_superpixels(rng, 10, 10, 8)
    e = build_rag(sp).matrix
    v = rng.normal(size=(8, 4))
    _, p, e_next = em_pool(LevelGraph(1, v, e), 4, 3, 1.0)
    assert np.allclose(e_next, e_next.T)
    assert np.all(e_next >= 0)
    assert np.all(np.diag(e_next) == 0)


def test_em_center_merge():
    # two tight clusters; epsilon large enough to merge duplicate centers
    v = pad_to(np.array([0.0, 0.01, 0.02, 0.03]), 2)
    centers, p, _ = em_pool(graph_of(v), 2, 5, 1.0, merge_epsilon=0.5)
    assert value_of(centers).shape[0]
    assert p.values.shape[1] == value_of(centers).shape[0] == 1
    assert np.allclose(p.values.sum(axis=0), 1.0, atol=1e-9)


# --- cumulative products ---

def test_cumulative_single():
    p = AssignmentMatrix(np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]).T / 1.0, BOTTOM_UP)
    # normalize columns to make it stochastic
    m = np.array([[0.2, 0.5], [0.8, 0.5]])
    out = cumulative_assignment([AssignmentMatrix(m, BOTTOM_UP)])
    assert np.array_equal(out.values, m)


def test_cumulative_permutations():
    p1 = np.array([[0.0, 1.0], [1.0, 0.0]])
    p2 = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = cumulative_assignment([AssignmentMatrix(p1, BOTTOM_UP), AssignmentMatrix(p2, BOTTOM_UP)])
    assert np.array_equal(out.values, np.eye(2))


def test_cumulative_oracle(rng):
    a = rng.uniform(size=(6, 4))
    a /= a.sum(axis=0)
    b = rng.uniform(size=(4, 2))
    b /= b.sum(axis=0)
    out = cumulative_assignment([AssignmentMatrix(a, BOTTOM_UP), AssignmentMatrix(b, BOTTOM_UP)])
    assert np.allclose(out.values, matmul_oracle(a, b), atol=1e-12)
    assert np.allclose(out.values.sum(axis=0), 1.0, atol=1e-9)


def test_cumulative_shape_mismatch():
    a = AssignmentMatrix(np.ones((3, 2)) / 3.0, BOTTOM_UP)
    b = AssignmentMatrix(np.ones((3, 2)) / 3.0, BOTTOM_UP)
    with pytest.raises(errors.ShapeMismatch):
        cumulative_assignment([a, b])


# --- projection ---

def test_project_identity_single(quad_sp):
    sp = validate_label_map(np.zeros((4, 4), np.int32))
    f = np.ones((3, 4, 4)) * 2.0
    h = np.array([[0.6, 0.8, 0.0]])
    cum = AssignmentMatrix(np.array([[1.0]]), BOTTOM_UP)
    w_in = np.eye(3)
    # U row equals l2norm(pooled @ I) = (1, 1, 1)/sqrt(3); force U == centers
    pooled = superpixel_pool(f, sp).features
    u_expected = pooled / np.linalg.norm(pooled)
    v, u = project_features(f, sp, u_expected.copy(), cum, w_in, GConvParams(weight=np.eye(3)))
    assert np.allclose(value_of(u), u_expected)
    expected = np.maximum(u_expected, 0)
    expected /= np.linalg.norm(expected)
    assert np.allclose(value_of(v), expected, atol=1e-12)


def test_project_matches_dense_oracle(rng, quad_sp):
    f = rng.normal(size=(5, 8, 8))
    w_in = rng.normal(size=(5, 3))
    centers = rng.normal(size=(2, 3))
    cum_raw = rng.uniform(size=(4, 2))
    cum_raw /= cum_raw.sum(axis=0)
    cum = AssignmentMatrix(cum_raw, BOTTOM_UP)
    w = rng.normal(size=(3, 3))
    v, u = project_features(f, quad_sp, centers, cum, w_in, GConvParams(weight=w))
    expected = gconv_oracle(value_of(u), centers, cum_raw, 1.0, w)
    assert np.allclose(value_of(v), expected, atol=1e-6)


def test_project_dimension_mismatch(rng, quad_sp):
    f = rng.normal(size=(5, 8, 8))
    cum = AssignmentMatrix(np.ones((4, 2)) / 4.0, BOTTOM_UP)
    with pytest.raises(errors.DimensionMismatch):
        project_features(f, quad_sp, np.zeros((3, 3)), cum, np.eye(5, 3), GConvParams(weight=np.eye(3)))


# --- readout ---

def test_readout_single_row():
    assert np.array_equal(value_of(readout(np.array([[1.0, 2.0, 3.0]]))), [1.0, 2.0, 3.0])


def test_readout_symmetry():
    v = np.array([[1.0, -2.0], [-1.0, 2.0]])
    assert np.allclose(value_of(readout(v)), 0.0)


def test_readout_oracle(rng):
    v = rng.normal(size=(5, 4))
    expected = np.array([sum(v[i, c] for i in range(5)) / 5.0 for c in range(4)])
    assert np.allclose(value_of(readout(v)), expected, atol=1e-9)


def test_readout_empty():
    with pytest.raises(errors.EmptyGraph):
        readout(np.zeros((0, 3)))


# --- build_hierarchy ---

def _features_for(rng, sp, levels, channels=6):
    h, w = sp.labels.shape
    return [rng.normal(size=(channels, max(1, h >> i), max(1, w >> i))) for i in range(levels)]


def test_build_single_level(rng, quad_sp):
    cfg = HierarchyConfig(levels=1, graph_width=4)
    params = init_model_params(cfg, [6], seed=0).pipeline
    feats = _features_for(rng, quad_sp, 1)
    h = build_hierarchy(feats, quad_sp, cfg, params)
    assert h.sizes == [4]
    assert np.allclose(value_of(h.global_vector), value_of(h.levels[0].vertices).mean(axis=0))


def test_build_singleton_chain(rng):
    sp = validate_label_map(np.zeros((8, 8), np.int32))
    cfg = HierarchyConfig(levels=3, graph_width=4)
    params = init_model_params(cfg, [6, 6, 6], seed=0).pipeline
    feats = _features_for(rng, sp, 3)
    h = build_hierarchy(feats, sp, cfg, params)
    assert h.sizes == [1, 1, 1]
    for p in h.assignments:
        assert p.values.tolist() == [[1.0]]


def test_build_level_sizes_and_stochastic(rng):
    sp = random_superpixels(rng, 16, 16, 8)
    cfg = HierarchyConfig(levels=3, graph_width=4)
    params = init_model_params(cfg, [6, 6, 6], seed=1).pipeline
    feats = _features_for(rng, sp, 3)
    h = build_hierarchy(feats, sp, cfg, params)
    assert h.sizes == [8, 4, 2]
    for p in h.assignments:
        assert np.allclose(p.values.sum(axis=0), 1.0, atol=1e-6)
    for c in h.cumulative:
        assert np.allclose(c.values.sum(axis=0), 1.0, atol=1e-5)


def test_build_halving_exact(rng):
    for n in (3, 5, 9, 17):
        sp = random_superpixels(rng, 20, 20, n)
        cfg = HierarchyConfig(levels=4, graph_width=4)
        params = init_model_params(cfg, [6] * 4, seed=1).pipeline
        feats = _features_for(rng, sp, 4)
        h = build_hierarchy(feats, sp, cfg, params)
        expected = [n]
        for _ in range(3):
            expected.append(math.ceil(expected[-1] / 2))
        assert h.sizes == expected


def test_build_level_count_mismatch(rng, quad_sp):
    cfg = HierarchyConfig(levels=2, graph_width=4)
    params = init_model_params(cfg, [6, 6], seed=0).pipeline
    with pytest.raises(errors.LevelCountMismatch):
        build_hierarchy(_features_for(rng, quad_sp, 3), quad_sp, cfg, params)


def test_build_deterministic(rng, quad_sp):
    cfg = HierarchyConfig(levels=2, graph_width=4)
    params = init_model_params(cfg, [6, 6], seed=0).pipeline
    feats = _features_for(rng, quad_sp, 2)
    h1 = build_hierarchy(feats, quad_sp, cfg, params, seed=7)
    h2 = build_hierarchy(feats, quad_sp, cfg, params, seed=7)
    for a, b in zip(h1.levels, h2.levels):
        assert np.array_equal(value_of(a.vertices), value_of(b.vertices))
    assert np.array_equal(value_of(h1.global_vector), value_of(h2.global_vector))
