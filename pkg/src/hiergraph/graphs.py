"""Core graph-hierarchy types and their JSON serialization.

Vertex features and assignment matrices may hold either numpy arrays or
autodiff Vars; serialization unwraps to plain arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import value_of
from .errors import InvalidConfig


@dataclass(frozen=True)
class HierarchyConfig:
    """Knobs of the grouping hierarchy.

    levels: number of graph levels (default 4)
    graph_width: uniform vertex feature width D shared by all levels
    sigma: Gaussian kernel bandwidth for both grouping directions
    k_train / k_eval: EM iteration counts per mode (5 train / 10 eval)
    pool_ratio: target fraction of vertices kept per pooling step (ceil)
    init: center initialization, "stride" or "random"
    tdmp_enabled: master switch for the top-down pass
    center_merge_epsilon: optional distance under which pooled centers merge
    max_superpixels: cap on base regions enforced by greedy merging
    """

    levels: int = 4
    graph_width: int = 256
    sigma: float = 1.0
    k_train: int = 5
    k_eval: int = 10
    pool_ratio: float = 0.5
    init: str = "stride"
    tdmp_enabled: bool = True
    center_merge_epsilon: float | None = None
    max_superpixels: int = 512

    def __post_init__(self):
        if self.levels < 1:
            raise InvalidConfig(f"levels must be >= 1, got {self.levels}")
        if self.graph_width < 1:
            raise InvalidConfig(f"graph_width must be >= 1, got {self.graph_width}")
        if self.sigma <= 0:
            raise InvalidConfig(f"sigma must be > 0, got {self.sigma}")
        if self.k_train < 1 or self.k_eval < 1:
            raise InvalidConfig("EM iteration counts must be >= 1")
        if not 0 < self.pool_ratio <= 1:
            raise InvalidConfig(f"pool_ratio must be in (0, 1], got {self.pool_ratio}")
        if self.init not in ("stride", "random"):
            raise InvalidConfig(f"unknown init strategy {self.init!r}")

    def k_for_mode(self, mode: str) -> int:
        if mode == "train":
            return self.k_train
        if mode == "eval":
            return self.k_eval
        raise InvalidConfig(f"unknown mode {mode!r}")

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "graph_width": self.graph_width,
            "sigma": self.sigma,
            "k_train": self.k_train,
            "k_eval": self.k_eval,
            "pool_ratio": self.pool_ratio,
            "init": self.init,
            "tdmp_enabled": self.tdmp_enabled,
            "center_merge_epsilon": self.center_merge_epsilon,
            "max_superpixels": self.max_superpixels,
        }

    @staticmethod
    def from_dict(d: dict) -> "HierarchyConfig":
        return HierarchyConfig(**d)


@dataclass
class LevelGraph:
    """One hierarchy level: vertex features V (N x D) and weighted adjacency
    E (N x N, symmetric, nonnegative; binary with zero diagonal at level 1)."""

    level: int
    vertices: object  # (N, D) ndarray or Var; None for feature-stripped loads
    adjacency: np.ndarray  # (N, N) float64

    @property
    def num_vertices(self) -> int:
        if self.vertices is None:
            return self.adjacency.shape[0]
        return value_of(self.vertices).shape[0]


BOTTOM_UP = "bottom_up"
TOP_DOWN = "top_down"


@dataclass
class AssignmentMatrix:
    """Soft correspondence between adjacent levels.

    bottom_up matrices are column-stochastic (grouping weights), top_down
    matrices are row-stochastic (decomposition weights).
    """

    data: object  # (N_src, N_dst) ndarray or Var
    direction: str = BOTTOM_UP

    @property
    def values(self) -> np.ndarray:
        return value_of(self.data)

    @property
    def shape(self):
        return self.values.shape


@dataclass
class Hierarchy:
    """Levels 1..L plus the grouping state produced while building them.

    assignments[l-1] maps level l to level l+1 (bottom-up); cumulative[l-1]
    is the running product mapping level 1 onto level l+1. pooled[l-1] holds
    the projected per-region features of level l's grid input (pooled[0] is
    the initial level-1 vertex matrix). topdown is populated by the top-down
    pass: topdown[l-1] maps level l to level l+1, the last entry targeting
    the single global vertex.
    """

    levels: list[LevelGraph]
    assignments: list[AssignmentMatrix]
    cumulative: list[AssignmentMatrix]
    pooled: list
    global_vector: object  # (D,) ndarray or Var
    config: HierarchyConfig
    image_size: tuple[int, int] | None = None
    topdown: list[AssignmentMatrix] | None = field(default=None)

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def sizes(self) -> list[int]:
        return [g.num_vertices for g in self.levels]

    def with_updated_vertices(self, vertices: list, topdown: list[AssignmentMatrix]) -> "Hierarchy":
        new_levels = [replace(g, vertices=v) for g, v in zip(self.levels, vertices)]
        return Hierarchy(
            levels=new_levels,
            assignments=self.assignments,
            cumulative=self.cumulative,
            pooled=self.pooled,
            global_vector=self.global_vector,
            config=self.config,
            image_size=self.image_size,
            topdown=topdown,
        )


def _edge_list(adjacency: np.ndarray) -> list[list]:
    ii, jj = np.nonzero(np.triu(adjacency, k=1))
    return [[int(i), int(j), float(adjacency[i, j])] for i, j in zip(ii, jj)]


def _matrix_payload(m: AssignmentMatrix) -> dict:
    vals = m.values
    return {
        "shape": [int(s) for s in vals.shape],
        "direction": m.direction,
        "data": [float(v) for v in vals.ravel()],
    }


def _matrix_restore(d: dict) -> AssignmentMatrix:
    arr = np.array(d["data"], dtype=np.float64).reshape(d["shape"])
    return AssignmentMatrix(data=arr, direction=d["direction"])


def hierarchy_to_json(h: Hierarchy, include_features: bool = False) -> str:
    doc = {
        "config": h.config.to_dict(),
        "image_size": list(h.image_size) if h.image_size else None,
        "num_base_regions": h.sizes[0],
        "levels": [
            {
                "level": g.level,
                "num_vertices": g.num_vertices,
                "edges": _edge_list(np.asarray(value_of(g.adjacency))),
                **(
                    {"vertex_features": [float(v) for v in value_of(g.vertices).ravel()]}
                    if include_features
                    else {}
                ),
            }
            for g in h.levels
        ],
        "assignments": [_matrix_payload(p) for p in h.assignments],
        "cumulative": [_matrix_payload(p) for p in h.cumulative],
        "topdown": [_matrix_payload(p) for p in h.topdown] if h.topdown is not None else None,
        "global_vector": [float(v) for v in value_of(h.global_vector).ravel()],
    }
    if include_features:
        doc["pooled"] = [[float(v) for v in value_of(u).ravel()] for u in h.pooled]
    return json.dumps(doc, sort_keys=True)


def hierarchy_from_json(text: str) -> Hierarchy:
    doc = json.loads(text)
    cfg = HierarchyConfig.from_dict(doc["config"])
    levels = []
    for lv in doc["levels"]:
        n = lv["num_vertices"]
        adj = np.zeros((n, n), dtype=np.float64)
        for i, j, w in lv["edges"]:
            adj[i, j] = w
            adj[j, i] = w
        feats = lv.get("vertex_features")
        v = np.array(feats, dtype=np.float64).reshape(n, -1) if feats is not None else None
        levels.append(LevelGraph(level=lv["level"], vertices=v, adjacency=adj))
    r = np.array(doc["global_vector"], dtype=np.float64)
    n_base = doc["num_base_regions"]
    pooled = [
        np.array(flat, dtype=np.float64).reshape(n_base, -1) for flat in doc.get("pooled", [])
    ]
    return Hierarchy(
        levels=levels,
        assignments=[_matrix_restore(p) for p in doc["assignments"]],
        cumulative=[_matrix_restore(p) for p in doc["cumulative"]],
        pooled=pooled,
        global_vector=r,
        config=cfg,
        image_size=tuple(doc["image_size"]) if doc.get("image_size") else None,
        topdown=[_matrix_restore(p) for p in doc["topdown"]] if doc.get("topdown") else None,
    )
