"""Cross-level graph convolution and the top-down half of the pipeline.

All cross-level exchanges use the same quasi-bipartite pattern: directed
edges from a source vertex set to a destination set, plus unit self-loops
on the destinations. Aggregation is a weighted average (incoming weights,
self-loop included, normalized per destination), followed by a linear map
and a nonlinearity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import value_of
from .errors import (
    EmptyGraph,
    IsolatedDestination,
    MissingTopDownState,
    ShapeMismatch,
)
from .graphs import TOP_DOWN, AssignmentMatrix, Hierarchy
from .superpixel import downsample_labels
from .tensor_io import SuperpixelMap

RELU_L2NORM = "relu-l2norm"
SIGMOID = "sigmoid"


@dataclass
class GConvParams:
    """Weight matrix plus the aggregation conventions.

    nonlinearity "relu-l2norm" applies ReLU then row L2 normalization
    (all-zero rows stay zero); "sigmoid" matches the literal aggregator
    definition. normalize=False disables the per-destination weighted
    average and uses raw weighted sums.
    """

    weight: object  # (D_in, D_out) ndarray or Var
    nonlinearity: str = RELU_L2NORM
    normalize: bool = True


@dataclass
class BipartiteGraph:
    """Directed source -> destination edges with destination self-loops.

    weights has shape (N_src, N_dst); self_loop is the per-destination
    loop weight (None disables self-loops entirely).
    """

    src: object | None  # (N_s, D) ndarray or Var
    dst: object  # (N_d, D) ndarray or Var
    weights: object | None  # (N_s, N_d) ndarray or Var
    self_loop: float | None = 1.0


def _check_weights(g: BipartiteGraph) -> None:
    if (g.src is None) != (g.weights is None):
        raise ShapeMismatch("src and weights must be supplied together")
    if g.weights is not None:
        ws = value_of(g.weights).shape
        ns = value_of(g.src).shape[0]
        nd = value_of(g.dst).shape[0]
        if ws != (ns, nd):
            raise ShapeMismatch(f"edge weights {ws} do not match {ns} sources x {nd} destinations")
        if value_of(g.src).shape[1] != value_of(g.dst).shape[1]:
            raise ShapeMismatch("source and destination feature widths differ")


def gconv(g: BipartiteGraph, p: GConvParams):
    """Weighted-average aggregation over incoming edges, then W and the
    nonlinearity. Summation order is fixed (ascending source index) by the
    underlying dense matrix product."""
    _check_weights(g)
    if value_of(g.dst).shape[0] == 0:
        raise EmptyGraph("no destination vertices")
    d_in = value_of(p.weight).shape[0]
    if value_of(g.dst).shape[1] != d_in:
        raise ShapeMismatch(
            f"feature width {value_of(g.dst).shape[1]} does not match weight input {d_in}"
        )

    if g.weights is not None:
        w_t = ad.transpose(g.weights)  # (N_d, N_s)
        agg = ad.matmul(w_t, g.src)
        total = ad.row_sums(w_t)
    else:
        agg = None
        total = None

    if g.self_loop is not None:
        loop = float(g.self_loop)
        self_part = ad.scale(g.dst, loop)
        agg = self_part if agg is None else ad.add(agg, self_part)
        total = loop if total is None else ad.add(total, np.float64(loop))
    else:
        totals = value_of(total)
        if totals is None or (np.asarray(totals) == 0.0).any():
            raise IsolatedDestination("destination with zero incoming weight and no self-loop")

    if p.normalize:
        if isinstance(total, float):
            agg = ad.scale(agg, 1.0 / total)
        else:
            agg = ad.div_rows(agg, total)

    h = ad.matmul(agg, p.weight)
    if p.nonlinearity == RELU_L2NORM:
        return ad.l2norm_rows(ad.relu(h))
    if p.nonlinearity == SIGMOID:
        return ad.sigmoid(h)
    raise ShapeMismatch(f"unknown nonlinearity {p.nonlinearity!r}")


def tdmp_edges(v_lo, v_hi, sigma: float) -> AssignmentMatrix:
    """Row-stochastic Gaussian affinities from each lower-level vertex to
    the (already updated) upper-level vertices."""
    if value_of(v_lo).shape[0] == 0 or value_of(v_hi).shape[0] == 0:
        raise EmptyGraph("top-down edges need nonempty vertex sets")
    p = ad.kernel_resp(v_lo, v_hi, sigma, axis=1)
    return AssignmentMatrix(data=p, direction=TOP_DOWN)


def tdmp(h: Hierarchy, conv_params: list[GConvParams], *, detach_assignments: bool = False) -> Hierarchy:
    """Top-down refinement from the global vertex down to level 1.

    Returns a new hierarchy with updated vertex features and the stored
    top-down assignments; level sizes, adjacency and every bottom-up
    product are untouched. When the config disables the pass, the input
    hierarchy is returned unchanged.
    """
    if not h.config.tdmp_enabled:
        return h
    n_levels = h.num_levels
    if len(conv_params) != n_levels:
        raise ShapeMismatch(f"need {n_levels} conv params, got {len(conv_params)}")

    sigma = h.config.sigma
    vertices = [g.vertices for g in h.levels]
    width = value_of(h.global_vector).shape[0]
    upper = ad.reshape(h.global_vector, (1, width))
    topdown: list[AssignmentMatrix | None] = [None] * n_levels
    for level in range(n_levels, 0, -1):
        v_lo = vertices[level - 1]
        if detach_assignments:
            p = ad.kernel_resp(v_lo, upper, sigma, axis=1, stop_gradient=True)
            edges = AssignmentMatrix(data=p, direction=TOP_DOWN)
        else:
            edges = tdmp_edges(v_lo, upper, sigma)
        graph = BipartiteGraph(
            src=upper, dst=v_lo, weights=ad.transpose(edges.data), self_loop=1.0
        )
        vertices[level - 1] = gconv(graph, conv_params[level - 1])
        topdown[level - 1] = edges
        upper = vertices[level - 1]
    return h.with_updated_vertices(vertices, topdown)  # type: ignore[arg-type]


def _topdown_chain(h: Hierarchy, level: int):
    """Cumulative map from level-1 granularity onto `level` vertices.

    Composed coarse-to-fine from the stored per-level top-down assignments
    (identity at level 1). When the top-down pass is disabled the bottom-up
    cumulative products take its place.
    """
    n1 = h.sizes[0]
    if level == 1:
        return np.eye(n1, dtype=np.float64)
    if h.config.tdmp_enabled:
        if h.topdown is None:
            raise MissingTopDownState("run the top-down pass before re-projecting")
        chain = h.topdown[0].data
        for k in range(1, level - 1):
            chain = ad.matmul(chain, h.topdown[k].data)
        return chain
    return h.cumulative[level - 2].data


def reproject(
    h: Hierarchy,
    sp: SuperpixelMap,
    features: list[np.ndarray],
    conv_params: list[GConvParams],
    output_proj: list,
) -> list:
    """Transfer vertex features back onto each level's grid.

    Per level: aggregate level-l vertices onto the per-region nodes through
    the cumulative top-down weights (self-loops on the region nodes), map
    the result to the level's channel count, and broadcast rows over the
    superpixel regions at that level's resolution.
    """
    n_levels = h.num_levels
    if len(features) != n_levels or len(conv_params) != n_levels or len(output_proj) != n_levels:
        raise ShapeMismatch("need per-level features, conv params, and output projections")

    out = []
    for level in range(1, n_levels + 1):
        f = features[level - 1]
        _, fh, fw = np.asarray(f).shape
        chain = _topdown_chain(h, level)  # (N_1, N_level)
        graph = BipartiteGraph(
            src=h.levels[level - 1].vertices,
            dst=h.pooled[level - 1],
            weights=ad.transpose(chain),
            self_loop=1.0,
        )
        u_hat = gconv(graph, conv_params[level - 1])
        rows = ad.matmul(u_hat, output_proj[level - 1])  # (N_1, C_l)
        labels = downsample_labels(sp, fh, fw)
        out.append(ad.broadcast_regions(rows, labels))
    return out
