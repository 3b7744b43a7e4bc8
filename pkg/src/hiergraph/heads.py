"""Multi-task parsing heads at toy scale.

A deterministic hand-built feature extractor stands in for a CNN backbone
(per-cell statistics at strides 4/8/16/32); the heads fuse original and
re-projected grids with residual sums, upsample everything to the finest
level, and attach five linear classifiers: per-pixel object / part /
material, plus image-level scene and texture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import value_of
from .errors import AllPixelsIgnored, IndivisibleSize, ShapeMismatch
from .params import HeadParams, TaskWeights

DEMO_STRIDES = (4, 8, 16, 32)
DEMO_CHANNELS = 12


@dataclass(frozen=True)
class TaskTargets:
    """Ground truth for the five tasks; any subset may be present.

    Dense maps are int label arrays at the logits' resolution with -1
    marking ignored pixels.
    """

    object: np.ndarray | None = None
    part: np.ndarray | None = None
    material: np.ndarray | None = None
    scene: int | None = None
    texture: int | None = None

    def any_present(self) -> bool:
        return any(
            t is not None
            for t in (self.object, self.part, self.material, self.scene, self.texture)
        )


@dataclass
class FusedFeatures:
    per_level: list  # residual sums at native resolutions
    concat: object  # all levels upsampled to level-1 size, channel-concat
    level1: object  # the bottom-level residual sum


@dataclass
class TaskLogits:
    object: object | None = None
    part: object | None = None
    material: object | None = None
    scene: object | None = None
    texture: object | None = None


def _cell_mean(x: np.ndarray, s: int) -> np.ndarray:
    c, h, w = x.shape
    return x.reshape(c, h // s, s, w // s, s).mean(axis=(2, 4))


def extract_demo_features(image: np.ndarray) -> list[np.ndarray]:
    """Deterministic 12-channel per-cell statistics at each stride:
    channel means, horizontal / vertical gradient means (within-cell
    differences only), and per-channel variance."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeMismatch(f"expected (3, H, W) image, got {image.shape}")
    _, h, w = image.shape
    if h % 32 or w % 32:
        raise IndivisibleSize(f"image size {h}x{w} must be divisible by 32")

    out = []
    dx = np.zeros_like(image)
    dx[:, :, : w - 1] = image[:, :, 1:] - image[:, :, : w - 1]
    dy = np.zeros_like(image)
    dy[:, : h - 1, :] = image[:, 1:, :] - image[:, : h - 1, :]
    for s in DEMO_STRIDES:
        dxc = dx.copy()
        dxc[:, :, s - 1 :: s] = 0.0  # drop diffs that cross a cell border
        dyc = dy.copy()
        dyc[:, s - 1 :: s, :] = 0.0
        mean = _cell_mean(image, s)
        gx = _cell_mean(dxc, s) * (s / (s - 1.0))
        gy = _cell_mean(dyc, s) * (s / (s - 1.0))
        var = _cell_mean(image * image, s) - mean * mean
        out.append(np.concatenate([mean, gx, gy, np.maximum(var, 0.0)], axis=0))
    return out


def fuse(f: list, f_hat: list) -> FusedFeatures:
    """Residual-sum each level, bilinearly upsample everything to the
    bottom level's resolution, and concatenate channels."""
    if len(f) != len(f_hat):
        raise ShapeMismatch(f"{len(f)} original vs {len(f_hat)} re-projected levels")
    sums = []
    for a, b in zip(f, f_hat):
        if np.asarray(value_of(a)).shape != np.asarray(value_of(b)).shape:
            raise ShapeMismatch(
                f"level shapes differ: {np.asarray(value_of(a)).shape} vs "
                f"{np.asarray(value_of(b)).shape}"
            )
        sums.append(ad.add(a, b))
    _, h1, w1 = np.asarray(value_of(sums[0])).shape
    ups = [
        s if np.asarray(value_of(s)).shape[1:] == (h1, w1) else ad.bilinear_upsample(s, (h1, w1))
        for s in sums
    ]
    return FusedFeatures(per_level=sums, concat=ad.concat(ups, axis=0), level1=sums[0])


def forward_heads(fused: FusedFeatures, global_vector, f_top: np.ndarray, params: HeadParams) -> TaskLogits:
    """Per-pixel linear heads on the fused grids; scene from GAP of the
    original top feature map residual-added to the projected global vector;
    texture from GAP of the fused bottom level."""
    object_logits = ad.channel_matmul(fused.concat, params.object_w)
    part_logits = ad.channel_matmul(fused.concat, params.part_w)
    material_logits = ad.channel_matmul(fused.level1, params.material_w)

    gap_top = np.asarray(f_top, dtype=np.float64).mean(axis=(1, 2))  # constant input
    scene_vec = ad.add(ad.matmul(global_vector, params.readout_proj), gap_top)
    scene_logits = ad.matmul(scene_vec, params.scene_w)

    texture_gap = ad.mean_over(fused.level1, (1, 2))
    texture_logits = ad.matmul(texture_gap, params.texture_w)
    return TaskLogits(
        object=object_logits,
        part=part_logits,
        material=material_logits,
        scene=scene_logits,
        texture=texture_logits,
    )


def texture_map(fused: FusedFeatures, params: HeadParams):
    """Qualitative per-pixel texture scores (the classifier applied at every
    bottom-level pixel); not part of the training loss."""
    return ad.channel_matmul(fused.level1, params.texture_w)


def _dense_loss(logits, target: np.ndarray, name: str):
    target = np.asarray(target)
    if value_of(logits).shape[1:] != target.shape:
        raise ShapeMismatch(
            f"{name} targets {target.shape} do not match logits {value_of(logits).shape}"
        )
    if not (target >= 0).any():
        raise AllPixelsIgnored(f"every {name} pixel is ignored")
    return ad.cross_entropy_map(logits, target)


def multitask_loss_terms(logits: TaskLogits, targets: TaskTargets) -> dict:
    """Cross-entropy per present task (un-weighted)."""
    if not targets.any_present():
        raise ValueError("no tasks present in targets")
    terms = {}
    if targets.object is not None:
        terms["object"] = _dense_loss(logits.object, targets.object, "object")
    if targets.part is not None:
        terms["part"] = _dense_loss(logits.part, targets.part, "part")
    if targets.material is not None:
        terms["material"] = _dense_loss(logits.material, targets.material, "material")
    if targets.scene is not None:
        terms["scene"] = ad.cross_entropy_vec(logits.scene, targets.scene)
    if targets.texture is not None:
        terms["texture"] = ad.cross_entropy_vec(logits.texture, targets.texture)
    return terms


def multitask_loss(logits: TaskLogits, targets: TaskTargets, weights: TaskWeights | None = None):
    """Weighted sum of the per-task cross-entropies; absent tasks contribute
    nothing."""
    weights = weights or TaskWeights()
    terms = multitask_loss_terms(logits, targets)
    total = None
    for name, term in terms.items():
        weighted = ad.scale(term, getattr(weights, name))
        total = weighted if total is None else ad.add(total, weighted)
    return total
