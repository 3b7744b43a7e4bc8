"""End-to-end forward pass wiring every stage together.

The same code path serves plain inference (numpy arrays in, numpy arrays
out) and taped runs (parameters as Var leaves); recording never perturbs
values, so both modes agree bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import value_of
from .graphs import Hierarchy, HierarchyConfig
from .heads import FusedFeatures, TaskLogits, TaskTargets, forward_heads, fuse, multitask_loss_terms
from .hierarchy import build_hierarchy
from .message_passing import GConvParams, reproject, tdmp
from .params import ModelParams
from .superpixel import RegionAdjacency
from .tensor_io import SuperpixelMap


@dataclass
class PipelineOutputs:
    bottom_up: Hierarchy
    hierarchy: Hierarchy  # after the top-down pass (same object when disabled)
    f_hat: list
    fused: FusedFeatures
    logits: TaskLogits | None
    loss_terms: dict | None
    total_loss: object | None


def run_pipeline(
    features: list[np.ndarray],
    sp: SuperpixelMap,
    cfg: HierarchyConfig,
    params: ModelParams,
    targets: TaskTargets | None = None,
    *,
    mode: str = "eval",
    seed: int = 0,
    rag: RegionAdjacency | None = None,
    detach_assignments: bool = False,
) -> PipelineOutputs:
    """build -> top-down pass -> re-projection -> fusion -> heads -> loss.

    Heads and loss run only when head parameters (and, for the loss,
    targets) are available.
    """
    features = [np.asarray(f, dtype=np.float64) for f in features]
    pipe = params.pipeline
    bottom_up = build_hierarchy(
        features, sp, cfg, pipe, mode=mode, seed=seed, rag=rag,
        detach_assignments=detach_assignments,
    )
    hierarchy = tdmp(
        bottom_up,
        [GConvParams(weight=w) for w in pipe.topdown_conv],
        detach_assignments=detach_assignments,
    )
    f_hat = reproject(
        hierarchy,
        sp,
        features,
        [GConvParams(weight=w) for w in pipe.reproj_conv],
        pipe.output_proj,
    )
    fused = fuse(features, f_hat)

    logits = None
    loss_terms = None
    total = None
    if params.heads is not None:
        logits = forward_heads(fused, bottom_up.global_vector, features[-1], params.heads)
        if targets is not None and targets.any_present():
            loss_terms = multitask_loss_terms(logits, targets)
            from . import autodiff as ad

            for name, term in loss_terms.items():
                weighted = ad.scale(term, getattr(params.heads.weights, name))
                total = weighted if total is None else ad.add(total, weighted)
    return PipelineOutputs(
        bottom_up=bottom_up,
        hierarchy=hierarchy,
        f_hat=f_hat,
        fused=fused,
        logits=logits,
        loss_terms=loss_terms,
        total_loss=total,
    )


def make_loss_fn(
    features,
    sp: SuperpixelMap,
    cfg: HierarchyConfig,
    targets: TaskTargets,
    template: ModelParams,
    *,
    mode: str = "train",
    seed: int = 0,
    rag: RegionAdjacency | None = None,
    detach_assignments: bool = False,
):
    """Scalar loss as a function of the flat parameter dict; suitable for
    forward_record and finite_diff_check."""

    def f(param_dict):
        mp = ModelParams.from_dict(param_dict, template)
        out = run_pipeline(
            features, sp, cfg, mp, targets,
            mode=mode, seed=seed, rag=rag, detach_assignments=detach_assignments,
        )
        return out.total_loss

    return f


def pipeline_state_arrays(out: PipelineOutputs) -> dict[str, np.ndarray]:
    """Plain-array snapshot of the pipeline state (for determinism checks
    and serialization)."""
    state: dict[str, np.ndarray] = {}
    for g in out.hierarchy.levels:
        state[f"v{g.level}"] = np.asarray(value_of(g.vertices))
        state[f"e{g.level}"] = np.asarray(g.adjacency)
    for i, p in enumerate(out.hierarchy.assignments):
        state[f"p{i + 1}"] = p.values
    for i, c in enumerate(out.hierarchy.cumulative):
        state[f"cum{i + 1}"] = c.values
    if out.hierarchy.topdown is not None:
        for i, p in enumerate(out.hierarchy.topdown):
            state[f"ptd{i + 1}"] = p.values
    state["global"] = np.asarray(value_of(out.hierarchy.global_vector))
    for i, fh in enumerate(out.f_hat):
        state[f"fhat{i + 1}"] = np.asarray(value_of(fh))
    return state
