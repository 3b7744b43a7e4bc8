"""Closed-form multiply-add and parameter accounting.

One multiply-add counts as one FLOP unit. The grouping pipeline's count is
assembled from per-stage terms, each tagged with its polynomial degree in
the graph width so scaling behavior is checkable term by term. The dense
non-local baseline is the standard pairwise-affinity block with an
embedding width of half the input channels and three 1x1 projections.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import InvalidConfig
from .graphs import HierarchyConfig


@dataclass(frozen=True)
class CostTerm:
    madds: int
    width_degree: int  # 0, 1, or 2: power of the graph width in this term


@dataclass
class CostReport:
    label: str
    terms: dict[str, CostTerm]
    params: dict[str, int]
    config: dict = field(default_factory=dict)

    @property
    def total_madds(self) -> int:
        return sum(t.madds for t in self.terms.values())

    @property
    def total_params(self) -> int:
        return sum(self.params.values())

    def group_totals(self) -> dict[str, int]:
        groups: dict[str, int] = {}
        for name, term in self.terms.items():
            group = name.split(".")[0]
            groups[group] = groups.get(group, 0) + term.madds
        return groups

    def to_json(self) -> str:
        return json.dumps(
            {
                "label": self.label,
                "config": self.config,
                "terms": {k: {"madds": t.madds, "width_degree": t.width_degree} for k, t in self.terms.items()},
                "params": self.params,
                "total_madds": self.total_madds,
                "total_params": self.total_params,
            },
            sort_keys=True,
        )

    def to_text(self) -> str:
        lines = [f"{self.label}", f"{'stage':<28}{'multiply-adds':>16}"]
        for group, madds in sorted(self.group_totals().items()):
            lines.append(f"{group:<28}{madds:>16,}")
        lines.append(f"{'total':<28}{self.total_madds:>16,}")
        lines.append(f"{'parameters':<28}{self.total_params:>16,}")
        return "\n".join(lines)


def _level_sizes(n1: int, levels: int, ratio: float) -> list[int]:
    sizes = [n1]
    for _ in range(levels - 1):
        sizes.append(max(1, math.ceil(sizes[-1] * ratio)))
    return sizes


def count_grouping_pipeline(
    cfg: HierarchyConfig,
    resolutions: list[tuple[int, int]],
    channels: list[int],
    n_regions: int | None = None,
    k: int | None = None,
) -> CostReport:
    """Analytic cost of the full grouping pipeline at a given configuration.

    resolutions / channels give each level's grid map; n_regions defaults
    to the configured superpixel cap; k defaults to the evaluation count.
    """
    if len(resolutions) != cfg.levels or len(channels) != cfg.levels:
        raise InvalidConfig("need one resolution and channel count per level")
    if any(h < 1 or w < 1 for h, w in resolutions) or any(c < 1 for c in channels):
        raise InvalidConfig("resolutions and channels must be positive")
    n1 = cfg.max_superpixels if n_regions is None else n_regions
    if n1 < 1:
        raise InvalidConfig(f"region count {n1} must be >= 1")
    k = cfg.k_eval if k is None else k
    d = cfg.graph_width
    sizes = _level_sizes(n1, cfg.levels, cfg.pool_ratio)

    terms: dict[str, CostTerm] = {}
    params: dict[str, int] = {}

    for lvl, ((h, w), c) in enumerate(zip(resolutions, channels), start=1):
        terms[f"pooling.l{lvl}"] = CostTerm(c * h * w, 0)
        terms[f"input_proj.l{lvl}"] = CostTerm(n1 * c * d, 1)
        params[f"input_proj.l{lvl}"] = c * d

    # planar RAG bound at level 1; pooled adjacencies counted dense
    nnz = [min(2 * max(3 * n1 - 6, 0), n1 * n1)] + [s * s for s in sizes[1:]]
    for lvl in range(1, cfg.levels):
        n, m = sizes[lvl - 1], sizes[lvl]
        terms[f"em_pool.l{lvl}.responsibilities"] = CostTerm(k * n * m * d, 1)
        terms[f"em_pool.l{lvl}.normalize"] = CostTerm(k * n * m, 0)
        terms[f"em_pool.l{lvl}.centers"] = CostTerm(k * m * n * d, 1)
        terms[f"adjacency_pool.l{lvl}"] = CostTerm(nnz[lvl - 1] * m + n * m * m, 0)
        edges = n1 * m + m  # cross edges + self-loops
        terms[f"project.l{lvl}.aggregate"] = CostTerm(edges * d, 1)
        terms[f"project.l{lvl}.weight"] = CostTerm(m * d * d, 2)
        params[f"pool_conv.l{lvl}"] = d * d
        if lvl >= 2:
            terms[f"cumulative.l{lvl}"] = CostTerm(n1 * sizes[lvl - 1] * m, 0)

    terms["readout"] = CostTerm(sizes[-1] * d, 1)

    if cfg.tdmp_enabled:
        upper = sizes[1:] + [1]
        for lvl in range(cfg.levels, 0, -1):
            n, m = sizes[lvl - 1], upper[lvl - 1]
            terms[f"topdown.l{lvl}.edge_distances"] = CostTerm(n * m * d, 1)
            terms[f"topdown.l{lvl}.edge_normalize"] = CostTerm(n * m, 0)
            edges = n * m + n
            terms[f"topdown.l{lvl}.aggregate"] = CostTerm(edges * d, 1)
            terms[f"topdown.l{lvl}.weight"] = CostTerm(n * d * d, 2)
            params[f"topdown_conv.l{lvl}"] = d * d

    for lvl in range(1, cfg.levels + 1):
        n = sizes[lvl - 1]
        c = channels[lvl - 1]
        if lvl >= 3:
            terms[f"reproject.l{lvl}.chain"] = CostTerm(n1 * sizes[lvl - 2] * n, 0)
        edges = n1 * n + n1
        terms[f"reproject.l{lvl}.aggregate"] = CostTerm(edges * d, 1)
        terms[f"reproject.l{lvl}.weight"] = CostTerm(n1 * d * d, 2)
        terms[f"reproject.l{lvl}.output_proj"] = CostTerm(n1 * d * c, 1)
        params[f"reproj_conv.l{lvl}"] = d * d
        params[f"output_proj.l{lvl}"] = d * c

    return CostReport(
        label="grouping-pipeline",
        terms=terms,
        params=params,
        config={
            "levels": cfg.levels,
            "graph_width": d,
            "em_iters": k,
            "regions": n1,
            "resolutions": [list(r) for r in resolutions],
            "channels": list(channels),
            "tdmp_enabled": cfg.tdmp_enabled,
        },
    )


def count_nonlocal(h: int, w: int, c: int) -> CostReport:
    """Dense pairwise-affinity context block: embedding width c/2, the
    (hw)^2 affinity + aggregation pair, and three 1x1 projections."""
    if h < 1 or w < 1 or c < 1:
        raise InvalidConfig("dimensions must be positive")
    c_embed = c // 2
    hw = h * w
    terms = {
        "pairwise": CostTerm(2 * hw * hw * c_embed, 0),
        "projections": CostTerm(3 * hw * c * c_embed, 0),
    }
    params = {"projections": 3 * c * c_embed}
    return CostReport(
        label="non-local-baseline",
        terms=terms,
        params=params,
        config={"height": h, "width": w, "channels": c, "embed": c_embed},
    )
