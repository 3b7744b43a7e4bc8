"""Interpretability built on the stored grouping state.

Everything here is a pure read of an immutable hierarchy: hard ancestor
assignment by argmax-chaining the bottom-up matrices, click-to-region
propagation, per-level Grad-CAM heat, and per-level grouping label maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import value_of
from .errors import LevelOutOfRange, OutOfBoundsClick, ShapeMismatch
from .graphs import Hierarchy
from .tensor_io import SuperpixelMap

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class Click:
    x: int
    y: int
    polarity: str = POSITIVE


@dataclass(frozen=True)
class ClickSet:
    clicks: tuple[Click, ...]
    level: int


def hard_assignment(h: Hierarchy, level: int) -> np.ndarray:
    """Ancestor of every base region at the requested level, computed by
    chaining per-row argmax over the bottom-up assignments (ties pick the
    smallest index)."""
    if level < 1 or level > h.num_levels:
        raise LevelOutOfRange(f"level {level} outside [1, {h.num_levels}]")
    ancestors = np.arange(h.sizes[0], dtype=np.int64)
    for k in range(level - 1):
        parents = np.argmax(h.assignments[k].values, axis=1)
        ancestors = parents[ancestors]
    return ancestors


def click_propagate(h: Hierarchy, sp: SuperpixelMap, clicks: ClickSet) -> np.ndarray:
    """Boolean H x W mask: the union of base regions whose level ancestor
    was positively selected and not negatively removed."""
    ancestors = hard_assignment(h, clicks.level)
    positives: set[int] = set()
    negatives: set[int] = set()
    for c in clicks.clicks:
        if not (0 <= c.x < sp.width and 0 <= c.y < sp.height):
            raise OutOfBoundsClick(f"click ({c.x}, {c.y}) outside {sp.width}x{sp.height}")
        region = int(sp.labels[c.y, c.x])
        group = int(ancestors[region])
        if c.polarity == POSITIVE:
            positives.add(group)
        elif c.polarity == NEGATIVE:
            negatives.add(group)
        else:
            raise ShapeMismatch(f"unknown polarity {c.polarity!r}")
    selected = positives - negatives
    if not selected:
        return np.zeros_like(sp.labels, dtype=bool)
    chosen = np.isin(ancestors, sorted(selected))
    return chosen[sp.labels]


def graph_gradcam(h: Hierarchy, level: int, grads: np.ndarray, sp: SuperpixelMap):
    """Channel-importance weighted vertex activations, rectified and
    max-normalized, broadcast to pixels through the grouping ancestry.

    Returns (vertex_heat (N_l,), pixel_heat (H, W) in [0, 1]).
    """
    if level < 1 or level > h.num_levels:
        raise LevelOutOfRange(f"level {level} outside [1, {h.num_levels}]")
    v = np.asarray(value_of(h.levels[level - 1].vertices))
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != v.shape:
        raise ShapeMismatch(f"grads {grads.shape} do not match vertices {v.shape}")
    alpha = grads.mean(axis=0)  # (D,)
    heat = np.maximum(v @ alpha, 0.0)
    peak = heat.max()
    if peak > 0:
        heat = heat / peak
    ancestors = hard_assignment(h, level)
    pixel_heat = heat[ancestors][sp.labels]
    return heat, pixel_heat


def grouping_maps(h: Hierarchy, sp: SuperpixelMap) -> list[np.ndarray]:
    """Per-level H x W label maps: each pixel gets its base region's
    ancestor at that level. Successive levels coarsen the partition."""
    out = []
    for level in range(1, h.num_levels + 1):
        ancestors = hard_assignment(h, level)
        out.append(ancestors[sp.labels].astype(np.int32))
    return out
