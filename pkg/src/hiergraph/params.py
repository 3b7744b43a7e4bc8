"""Trainable parameter containers with flat named views.

The flat dict view (name -> array) is what the tape records as leaves and
what the finite-difference checker perturbs; from_dict rebuilds the same
structure around Var handles so the forward code is oblivious to taping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphs import HierarchyConfig


@dataclass(frozen=True)
class TaskWeights:
    """Loss coefficients for the five parsing tasks."""

    scene: float = 0.25
    texture: float = 1.0
    object: float = 1.0
    part: float = 0.5
    material: float = 1.0


@dataclass
class PipelineParams:
    """Per-level weights of the grouping pipeline.

    input_proj[l-1]: channels -> graph width for level l's grid features
    pool_conv[l-1]: projection gconv producing level l+1 vertices
    topdown_conv[l-1]: gconv updating level l in the top-down pass
    reproj_conv[l-1]: gconv producing the per-region outputs of level l
    output_proj[l-1]: graph width -> channels for level l's output grid
    """

    input_proj: list
    pool_conv: list
    topdown_conv: list
    reproj_conv: list
    output_proj: list

    def to_dict(self, prefix: str = "pipe") -> dict[str, np.ndarray]:
        out = {}
        for group in ("input_proj", "pool_conv", "topdown_conv", "reproj_conv", "output_proj"):
            for i, arr in enumerate(getattr(self, group)):
                out[f"{prefix}.{group}.{i}"] = arr
        return out

    @staticmethod
    def from_dict(d: dict, template: "PipelineParams", prefix: str = "pipe") -> "PipelineParams":
        def group(name):
            return [d[f"{prefix}.{name}.{i}"] for i in range(len(getattr(template, name)))]

        return PipelineParams(
            input_proj=group("input_proj"),
            pool_conv=group("pool_conv"),
            topdown_conv=group("topdown_conv"),
            reproj_conv=group("reproj_conv"),
            output_proj=group("output_proj"),
        )


@dataclass
class HeadParams:
    """Per-task linear classifiers, the fusion projections, and the loss
    coefficients. Dense heads run on the channel-concatenated fused grid;
    the material head sees only the bottom-level sum."""

    object_w: object  # (C_cat, n_object)
    part_w: object  # (C_cat, n_part)
    material_w: object  # (C_1, n_material)
    scene_w: object  # (C_L, n_scene)
    readout_proj: object  # (D, C_L)
    texture_w: object  # (C_1, n_texture)
    weights: TaskWeights = field(default_factory=TaskWeights)

    def to_dict(self, prefix: str = "heads") -> dict[str, np.ndarray]:
        return {
            f"{prefix}.object_w": self.object_w,
            f"{prefix}.part_w": self.part_w,
            f"{prefix}.material_w": self.material_w,
            f"{prefix}.scene_w": self.scene_w,
            f"{prefix}.readout_proj": self.readout_proj,
            f"{prefix}.texture_w": self.texture_w,
        }

    @staticmethod
    def from_dict(d: dict, template: "HeadParams", prefix: str = "heads") -> "HeadParams":
        return HeadParams(
            object_w=d[f"{prefix}.object_w"],
            part_w=d[f"{prefix}.part_w"],
            material_w=d[f"{prefix}.material_w"],
            scene_w=d[f"{prefix}.scene_w"],
            readout_proj=d[f"{prefix}.readout_proj"],
            texture_w=d[f"{prefix}.texture_w"],
            weights=template.weights,
        )


@dataclass
class ModelParams:
    pipeline: PipelineParams
    heads: HeadParams | None = None

    def to_dict(self) -> dict[str, np.ndarray]:
        out = self.pipeline.to_dict()
        if self.heads is not None:
            out.update(self.heads.to_dict())
        return out

    @staticmethod
    def from_dict(d: dict, template: "ModelParams") -> "ModelParams":
        heads = (
            HeadParams.from_dict(d, template.heads) if template.heads is not None else None
        )
        return ModelParams(
            pipeline=PipelineParams.from_dict(d, template.pipeline),
            heads=heads,
        )


@dataclass(frozen=True)
class ClassCounts:
    object: int = 2
    part: int = 2
    material: int = 2
    scene: int = 2
    texture: int = 2


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    scale = np.sqrt(2.0 / (rows + cols))
    return rng.normal(0.0, scale, size=(rows, cols))


def init_pipeline_params(
    cfg: HierarchyConfig, channels: list[int], rng: np.random.Generator
) -> PipelineParams:
    d = cfg.graph_width
    levels = cfg.levels
    if len(channels) != levels:
        raise ValueError(f"need {levels} channel counts, got {len(channels)}")
    return PipelineParams(
        input_proj=[_glorot(rng, channels[i], d) for i in range(levels)],
        pool_conv=[_glorot(rng, d, d) for _ in range(levels - 1)],
        topdown_conv=[_glorot(rng, d, d) for _ in range(levels)],
        reproj_conv=[_glorot(rng, d, d) for _ in range(levels)],
        output_proj=[_glorot(rng, d, channels[i]) for i in range(levels)],
    )


def init_head_params(
    cfg: HierarchyConfig,
    channels: list[int],
    counts: ClassCounts,
    rng: np.random.Generator,
    weights: TaskWeights | None = None,
) -> HeadParams:
    c_cat = sum(channels)
    return HeadParams(
        object_w=_glorot(rng, c_cat, counts.object),
        part_w=_glorot(rng, c_cat, counts.part),
        material_w=_glorot(rng, channels[0], counts.material),
        scene_w=_glorot(rng, channels[-1], counts.scene),
        readout_proj=_glorot(rng, cfg.graph_width, channels[-1]),
        texture_w=_glorot(rng, channels[0], counts.texture),
        weights=weights or TaskWeights(),
    )


def init_model_params(
    cfg: HierarchyConfig,
    channels: list[int],
    counts: ClassCounts | None = None,
    seed: int = 0,
    weights: TaskWeights | None = None,
) -> ModelParams:
    rng = np.random.default_rng(seed)
    pipeline = init_pipeline_params(cfg, channels, rng)
    heads = (
        init_head_params(cfg, channels, counts, rng, weights) if counts is not None else None
    )
    return ModelParams(pipeline=pipeline, heads=heads)
