"""Bottom-up construction of the grouping hierarchy.

Level 1 comes from superpixel pooling plus the region adjacency graph;
each further level is produced by EM-based soft pooling (Gaussian kernel
responsibilities alternating with center updates) followed by a projection
step that mixes in the matching grid feature map through a quasi-bipartite
graph convolution.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import value_of
from .errors import (
    DimensionMismatch,
    EmptyGraph,
    InvalidM,
    LevelCountMismatch,
    ShapeMismatch,
)
from .graphs import BOTTOM_UP, AssignmentMatrix, Hierarchy, HierarchyConfig, LevelGraph
from .message_passing import BipartiteGraph, GConvParams, gconv
from .superpixel import RegionAdjacency, build_rag, superpixel_pool
from .tensor_io import SuperpixelMap


def init_base_graph(f1: np.ndarray, sp: SuperpixelMap, rag: RegionAdjacency, input_proj) -> LevelGraph:
    """Level-1 graph: region-pooled features, linearly projected to the
    graph width and L2-normalized; adjacency straight from the RAG."""
    if rag.num_regions != sp.num_regions:
        raise DimensionMismatch(
            f"RAG has {rag.num_regions} regions, label map has {sp.num_regions}"
        )
    pooled = superpixel_pool(f1, sp).features
    if pooled.shape[1] != value_of(input_proj).shape[0]:
        raise DimensionMismatch(
            f"feature channels {pooled.shape[1]} do not match projection rows "
            f"{value_of(input_proj).shape[0]}"
        )
    v = ad.l2norm_rows(ad.matmul(pooled, input_proj))
    return LevelGraph(level=1, vertices=v, adjacency=rag.matrix)


def _init_indices(n: int, m: int, strategy: str, seed: int | None) -> np.ndarray:
    if strategy == "stride":
        return (np.arange(m, dtype=np.int64) * n) // m
    if strategy == "random":
        rng = np.random.default_rng(0 if seed is None else seed)
        return np.sort(rng.choice(n, size=m, replace=False).astype(np.int64))
    raise ShapeMismatch(f"unknown init strategy {strategy!r}")


def _merge_close_centers(p, centers_value: np.ndarray, epsilon: float):
    """Collapse centers whose pairwise distance is below epsilon.

    Groups are connected components of the epsilon graph; the grouped
    assignment columns are summed and renormalized (uniform split), which
    keeps the result column-stochastic.
    """
    m = centers_value.shape[0]
    diff = centers_value[:, None, :] - centers_value[None, :, :]
    close = (diff * diff).sum(axis=2) < epsilon * epsilon
    group = np.full(m, -1, dtype=np.int64)
    n_groups = 0
    for i in range(m):
        if group[i] != -1:
            continue
        stack = [i]
        group[i] = n_groups
        while stack:
            j = stack.pop()
            for k in np.flatnonzero(close[j]):
                if group[k] == -1:
                    group[k] = n_groups
                    stack.append(int(k))
        n_groups += 1
    if n_groups == m:
        return p, m
    merge = np.zeros((m, n_groups), dtype=np.float64)
    sizes = np.bincount(group, minlength=n_groups)
    merge[np.arange(m), group] = 1.0 / sizes[group]
    return ad.matmul(p, merge), n_groups


def em_pool(
    graph: LevelGraph,
    m: int,
    k: int,
    sigma: float,
    init: str = "stride",
    seed: int | None = None,
    merge_epsilon: float | None = None,
    detach_assignments: bool = False,
):
    """Pool a graph to m centers with k rounds of soft EM.

    Each round recomputes column-stochastic responsibilities P against the
    current centers and replaces the centers with P^T V. The pooled
    adjacency is P^T E P, diagonal zeroed, symmetrized as (M + M^T) / 2.

    Returns (centers, assignment, pooled_adjacency).
    """
    n = graph.num_vertices
    if n == 0:
        raise EmptyGraph("cannot pool an empty graph")
    if m < 1 or m > n:
        raise InvalidM(f"m={m} outside [1, {n}]")
    if k < 1:
        raise InvalidM(f"k={k} must be >= 1")

    v = graph.vertices
    centers = ad.take_rows(v, _init_indices(n, m, init, seed))
    p = None
    for _ in range(k):
        p = ad.kernel_resp(v, centers, sigma, axis=0, stop_gradient=detach_assignments)
        centers = ad.matmul(ad.transpose(p), v)

    if merge_epsilon is not None:
        p, m_eff = _merge_close_centers(p, value_of(centers), merge_epsilon)
        if m_eff != m:
            centers = ad.matmul(ad.transpose(p), v)

    p_val = value_of(p)
    e_next = p_val.T @ graph.adjacency @ p_val
    np.fill_diagonal(e_next, 0.0)
    e_next = (e_next + e_next.T) / 2.0
    return centers, AssignmentMatrix(data=p, direction=BOTTOM_UP), e_next


def cumulative_assignment(ps: list[AssignmentMatrix]) -> AssignmentMatrix:
    """Ordinary matrix product of a bottom-up assignment chain."""
    if not ps:
        raise ShapeMismatch("empty assignment chain")
    for p in ps:
        if p.direction != BOTTOM_UP:
            raise ShapeMismatch("cumulative products are defined for bottom-up assignments")
    for a, b in zip(ps, ps[1:]):
        if a.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"chain mismatch: {a.shape} then {b.shape}")
    out = ps[0].data
    for p in ps[1:]:
        out = ad.matmul(out, p.data)
    return AssignmentMatrix(data=out, direction=BOTTOM_UP)


def project_features(
    f_next: np.ndarray,
    sp: SuperpixelMap,
    centers,
    cum_p: AssignmentMatrix,
    input_proj,
    conv: GConvParams,
):
    """Mix the next level's grid features into the pooled centers.

    The feature map is region-pooled and projected to the graph width
    (U, one row per base region); U rows connect to each center with the
    cumulative assignment weight, centers keep unit self-loops.

    Returns (vertices, u).
    """
    pooled = superpixel_pool(f_next, sp).features
    if pooled.shape[1] != value_of(input_proj).shape[0]:
        raise DimensionMismatch(
            f"feature channels {pooled.shape[1]} vs projection rows "
            f"{value_of(input_proj).shape[0]}"
        )
    if cum_p.shape != (pooled.shape[0], value_of(centers).shape[0]):
        raise DimensionMismatch(
            f"cumulative assignment {cum_p.shape} does not map "
            f"{pooled.shape[0]} regions onto {value_of(centers).shape[0]} centers"
        )
    u = ad.l2norm_rows(ad.matmul(pooled, input_proj))
    graph = BipartiteGraph(src=u, dst=centers, weights=cum_p.data, self_loop=1.0)
    return gconv(graph, conv), u


def readout(v_top):
    """Global vector: column-wise mean of the top level's vertex features."""
    if value_of(v_top).shape[0] == 0:
        raise EmptyGraph("readout of an empty graph")
    return ad.mean_over(v_top, (0,))


def build_hierarchy(
    features: list[np.ndarray],
    sp: SuperpixelMap,
    cfg: HierarchyConfig,
    params,
    *,
    mode: str = "eval",
    seed: int = 0,
    rag: RegionAdjacency | None = None,
    detach_assignments: bool = False,
) -> Hierarchy:
    """Run the full bottom-up pass.

    features: one grid map per level, resolutions non-increasing. params
    must provide input_proj (length L) and pool_conv (length L-1) arrays.
    """
    if len(features) != cfg.levels:
        raise LevelCountMismatch(f"expected {cfg.levels} feature maps, got {len(features)}")
    shapes = [np.asarray(f).shape for f in features]
    for a, b in zip(shapes, shapes[1:]):
        if b[1] > a[1] or b[2] > a[2]:
            raise LevelCountMismatch("feature resolutions must be non-increasing")
    if len(params.input_proj) != cfg.levels or len(params.pool_conv) != cfg.levels - 1:
        raise LevelCountMismatch("parameter lists do not match the level count")

    k = cfg.k_for_mode(mode)
    rag = rag if rag is not None else build_rag(sp)
    base = init_base_graph(features[0], sp, rag, params.input_proj[0])

    levels = [base]
    pooled_inputs = [base.vertices]
    assignments: list[AssignmentMatrix] = []
    cumulative: list[AssignmentMatrix] = []
    cum: AssignmentMatrix | None = None
    for level in range(1, cfg.levels):
        current = levels[-1]
        m = max(1, math.ceil(current.num_vertices * cfg.pool_ratio))
        centers, p, e_next = em_pool(
            current,
            m,
            k,
            cfg.sigma,
            init=cfg.init,
            seed=seed + level,
            merge_epsilon=cfg.center_merge_epsilon,
            detach_assignments=detach_assignments,
        )
        assignments.append(p)
        cum = p if cum is None else cumulative_assignment([cum, p])
        cumulative.append(cum)
        v, u = project_features(
            features[level], sp, centers, cum, params.input_proj[level],
            GConvParams(weight=params.pool_conv[level - 1]),
        )
        levels.append(LevelGraph(level=level + 1, vertices=v, adjacency=e_next))
        pooled_inputs.append(u)

    return Hierarchy(
        levels=levels,
        assignments=assignments,
        cumulative=cumulative,
        pooled=pooled_inputs,
        global_vector=readout(levels[-1].vertices),
        config=cfg,
        image_size=(sp.height, sp.width),
    )
