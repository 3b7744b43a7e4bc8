"""Run-length encoding for label maps, masks, and heat maps on the wire.

The payload is a row-major scan of the array encoded as [value, run]
pairs; decode expands them back to exactly width * height entries.
"""

from __future__ import annotations

import numpy as np

from .errors import LengthMismatch


def rle_encode(arr: np.ndarray) -> list[list[int]]:
    flat = np.asarray(arr).ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], changes))
    ends = np.concatenate((changes, [flat.size]))
    return [[int(flat[s]), int(e - s)] for s, e in zip(starts, ends)]


def rle_decode(pairs: list[list[int]], height: int, width: int, dtype=np.int32) -> np.ndarray:
    total = sum(run for _, run in pairs)
    if total != height * width:
        raise LengthMismatch(f"run lengths sum to {total}, expected {height * width}")
    out = np.empty(height * width, dtype=dtype)
    pos = 0
    for value, run in pairs:
        out[pos : pos + run] = value
        pos += run
    return out.reshape(height, width)


def mask_payload(mask: np.ndarray) -> dict:
    h, w = mask.shape
    return {"height": h, "width": w, "rle": rle_encode(mask.astype(np.uint8))}


def heat_payload(heat01: np.ndarray) -> dict:
    """8-bit quantization of a [0, 1] heat map."""
    q = np.round(np.clip(heat01, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = q.shape
    return {"height": h, "width": w, "rle": rle_encode(q)}


def labels_payload(labels: np.ndarray, num_labels: int) -> dict:
    h, w = labels.shape
    return {"height": h, "width": w, "num_labels": int(num_labels), "rle": rle_encode(labels)}
