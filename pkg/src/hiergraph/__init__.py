"""Hierarchical graph grouping engine.

Builds an irregular grouping hierarchy over superpixel regions from
multi-resolution grid features (EM-based soft pooling), refines it with a
top-down pass, re-projects the result back onto the grids, and attaches a
toy multi-task parsing head. Includes reverse-mode differentiation of all
trainable weights, analytic cost accounting, and interactive applications
(click propagation, graph Grad-CAM, grouping visualization).
"""

from .applications import Click, ClickSet, click_propagate, graph_gradcam, grouping_maps, hard_assignment
from .costing import CostReport, count_grouping_pipeline, count_nonlocal
from .errors import EngineError
from .graphs import (
    AssignmentMatrix,
    Hierarchy,
    HierarchyConfig,
    LevelGraph,
    hierarchy_from_json,
    hierarchy_to_json,
)
from .heads import TaskTargets, extract_demo_features, forward_heads, fuse, multitask_loss
from .hierarchy import build_hierarchy, cumulative_assignment, em_pool, init_base_graph, project_features, readout
from .message_passing import BipartiteGraph, GConvParams, gconv, reproject, tdmp, tdmp_edges
from .params import ClassCounts, HeadParams, ModelParams, PipelineParams, TaskWeights, init_model_params
from .pipeline import run_pipeline
from .superpixel import (
    PooledFeatures,
    RegionAdjacency,
    build_rag,
    downsample_labels,
    generate_superpixels,
    greedy_merge,
    superpixel_pool,
)
from .tensor_io import SuperpixelMap, decode_tensor, encode_tensor, load_tensor, save_tensor, validate_label_map
from .training import TrainingHistory, poly_lr, train_toy

__version__ = "0.1.0"

__all__ = [
    "AssignmentMatrix",
    "BipartiteGraph",
    "ClassCounts",
    "Click",
    "ClickSet",
    "CostReport",
    "EngineError",
    "GConvParams",
    "HeadParams",
    "Hierarchy",
    "HierarchyConfig",
    "LevelGraph",
    "ModelParams",
    "PipelineParams",
    "PooledFeatures",
    "RegionAdjacency",
    "SuperpixelMap",
    "TaskTargets",
    "TaskWeights",
    "TrainingHistory",
    "build_hierarchy",
    "build_rag",
    "click_propagate",
    "count_grouping_pipeline",
    "count_nonlocal",
    "cumulative_assignment",
    "decode_tensor",
    "downsample_labels",
    "em_pool",
    "encode_tensor",
    "extract_demo_features",
    "forward_heads",
    "fuse",
    "gconv",
    "generate_superpixels",
    "graph_gradcam",
    "greedy_merge",
    "grouping_maps",
    "hard_assignment",
    "hierarchy_from_json",
    "hierarchy_to_json",
    "init_base_graph",
    "init_model_params",
    "load_tensor",
    "multitask_loss",
    "poly_lr",
    "project_features",
    "readout",
    "reproject",
    "run_pipeline",
    "save_tensor",
    "superpixel_pool",
    "tdmp",
    "tdmp_edges",
    "train_toy",
    "validate_label_map",
]
