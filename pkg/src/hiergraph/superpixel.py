"""Region-level machinery derived from a superpixel map.

Covers the region adjacency graph (4-connectivity), nearest-neighbor label
downsampling, per-region mean pooling of feature maps at any resolution,
greedy region merging down to a cap, and a grid-seeded k-means fallback
generator for when no external oversegmentation is supplied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TargetCountExceedsPixels, ZeroTargetSize
from .tensor_io import SuperpixelMap, validate_label_map


@dataclass(frozen=True)
class RegionAdjacency:
    """Symmetric 0/1 adjacency between regions sharing a 4-connected border."""

    num_regions: int
    matrix: np.ndarray  # (N, N) float64, zero diagonal

    def edges(self) -> list[tuple[int, int]]:
        ii, jj = np.nonzero(np.triu(self.matrix, k=1))
        return list(zip(ii.tolist(), jj.tolist()))


@dataclass(frozen=True)
class PooledFeatures:
    """Per-region mean features at one resolution.

    counts[i] == 0 marks a region with no pixels at the pooled resolution;
    its row is the feature sampled at the region's full-res centroid.
    """

    features: np.ndarray  # (N, C) float64
    counts: np.ndarray  # (N,) int64


def build_rag(sp: SuperpixelMap) -> RegionAdjacency:
    """Adjacency (a, b) iff some a-pixel is 4-adjacent to a b-pixel."""
    labels = sp.labels
    n = sp.num_regions
    adj = np.zeros((n, n), dtype=np.float64)
    horiz = labels[:, :-1] != labels[:, 1:]
    vert = labels[:-1, :] != labels[1:, :]
    for a, b in ((labels[:, :-1][horiz], labels[:, 1:][horiz]),
                 (labels[:-1, :][vert], labels[1:, :][vert])):
        adj[a, b] = 1.0
        adj[b, a] = 1.0
    np.fill_diagonal(adj, 0.0)
    adj.setflags(write=False)
    return RegionAdjacency(num_regions=n, matrix=adj)


def _nn_indices(n_src: int, n_dst: int) -> np.ndarray:
    # half-pixel-center sampling: src = round((dst + 0.5) * n_src / n_dst - 0.5),
    # rounding half up, clamped into range
    idx = np.floor((np.arange(n_dst, dtype=np.float64) + 0.5) * n_src / n_dst).astype(np.int64)
    return np.clip(idx, 0, n_src - 1)


def _coord_to_grid(coord: float, n_src: int, n_dst: int) -> int:
    idx = int(math.floor((coord + 0.5) * n_dst / n_src))
    return min(max(idx, 0), n_dst - 1)


def downsample_labels(sp: SuperpixelMap, h: int, w: int) -> np.ndarray:
    """Nearest-neighbor sample of the label map to (h, w). Regions may be
    empty at coarse resolutions."""
    if h < 1 or w < 1:
        raise ZeroTargetSize(f"target size {h}x{w}")
    src_h, src_w = sp.labels.shape
    if h > src_h or w > src_w:
        raise ValueError(f"target {h}x{w} exceeds source {src_h}x{src_w}")
    ys = _nn_indices(src_h, h)
    xs = _nn_indices(src_w, w)
    return sp.labels[np.ix_(ys, xs)].copy()


def superpixel_pool(f: np.ndarray, sp: SuperpixelMap) -> PooledFeatures:
    """Mean of feature columns per region, with centroid fallback for
    regions that vanish at the feature resolution."""
    f = np.asarray(f, dtype=np.float64)
    c, h, w = f.shape
    n = sp.num_regions
    ds = downsample_labels(sp, h, w)
    flat = ds.ravel()
    counts = np.bincount(flat, minlength=n)
    features = np.zeros((n, c), dtype=np.float64)
    np.add.at(features, flat, f.reshape(c, -1).T)
    nonzero = counts > 0
    features[nonzero] /= counts[nonzero, None]
    for i in np.flatnonzero(~nonzero):
        cy, cx = sp.centroids[i]
        yp = _coord_to_grid(cy, sp.height, h)
        xp = _coord_to_grid(cx, sp.width, w)
        features[i] = f[:, yp, xp]
    return PooledFeatures(features=features, counts=counts.astype(np.int64))


def greedy_merge(sp: SuperpixelMap, f: np.ndarray, max_regions: int) -> SuperpixelMap:
    """Merge the closest adjacent region pair (Euclidean distance between
    mean features) until at most max_regions remain.

    Ties pick the smallest (min-label, max-label) pair; surviving regions
    are re-compacted to contiguous labels in ascending original order.
    """
    if max_regions < 1:
        raise ZeroTargetSize(f"max_regions {max_regions}")
    if sp.num_regions <= max_regions:
        return sp

    pooled = superpixel_pool(f, sp)
    means = {i: pooled.features[i].copy() for i in range(sp.num_regions)}
    counts = {i: int(pooled.counts[i]) for i in range(sp.num_regions)}
    rag = build_rag(sp)
    neighbors = {i: set(np.flatnonzero(rag.matrix[i]).tolist()) for i in range(sp.num_regions)}
    alias = {i: i for i in range(sp.num_regions)}  # original label -> representative

    alive = set(range(sp.num_regions))
    while len(alive) > max_regions:
        best = None
        for a in sorted(alive):
            for b in sorted(neighbors[a]):
                if b <= a:
                    continue
                d = float(np.linalg.norm(means[a] - means[b]))
                key = (d, a, b)
                if best is None or key < best:
                    best = key
        if best is None:
            break  # disconnected map with nothing left to merge
        _, a, b = best
        na, nb = counts[a], counts[b]
        total = na + nb
        if total > 0:
            means[a] = (na * means[a] + nb * means[b]) / total
        else:
            means[a] = (means[a] + means[b]) / 2.0
        counts[a] = total
        neighbors[a] = (neighbors[a] | neighbors[b]) - {a, b}
        for nb_ in neighbors[b]:
            if nb_ != a:
                neighbors[nb_].discard(b)
                neighbors[nb_].add(a)
        neighbors[a].discard(b)
        del neighbors[b], means[b], counts[b]
        alive.remove(b)
        for orig, rep in alias.items():
            if rep == b:
                alias[orig] = a

    remap = {rep: new for new, rep in enumerate(sorted(alive))}
    lut = np.array([remap[alias[i]] for i in range(sp.num_regions)], dtype=np.int32)
    return validate_label_map(lut[sp.labels], max_regions=max_regions)


def _five_vectors(image: np.ndarray, lam: float) -> np.ndarray:
    c, h, w = image.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    feats = np.empty((h, w, 5), dtype=np.float64)
    feats[..., 0:3] = image.transpose(1, 2, 0)
    feats[..., 3] = lam * xs
    feats[..., 4] = lam * ys
    return feats


def _grid_seeds(h: int, w: int, target: int) -> np.ndarray:
    gx = max(1, math.ceil(math.sqrt(target * w / h)))
    gy = max(1, math.ceil(target / gx))
    cy = (np.arange(gy, dtype=np.float64) + 0.5) * h / gy
    cx = (np.arange(gx, dtype=np.float64) + 0.5) * w / gx
    yy, xx = np.meshgrid(cy, cx, indexing="ij")
    pts = np.stack([yy.ravel(), xx.ravel()], axis=1)[:target]
    return pts


def _largest_components_cleanup(labels: np.ndarray) -> np.ndarray:
    """Keep the largest 4-connected component per label; reassign every other
    fragment to the adjacent label sharing the most border pixels."""
    h, w = labels.shape
    comp = -np.ones((h, w), dtype=np.int64)
    comp_flat = comp.ravel()
    comp_label: list[int] = []
    comp_pixels: list[np.ndarray] = []
    nxt = 0
    flat = labels.ravel()
    for start in range(h * w):
        if comp_flat[start] != -1:
            continue
        lab = flat[start]
        stack = [start]
        comp_flat[start] = nxt
        members = [start]
        while stack:
            p = stack.pop()
            py, px = divmod(p, w)
            for qy, qx in ((py - 1, px), (py + 1, px), (py, px - 1), (py, px + 1)):
                if 0 <= qy < h and 0 <= qx < w:
                    q = qy * w + qx
                    if comp_flat[q] == -1 and flat[q] == lab:
                        comp_flat[q] = nxt
                        stack.append(q)
                        members.append(q)
        comp_label.append(int(lab))
        comp_pixels.append(np.array(sorted(members), dtype=np.int64))
        nxt += 1

    keep: dict[int, int] = {}
    for ci in range(nxt):
        lab = comp_label[ci]
        size = len(comp_pixels[ci])
        if lab not in keep:
            keep[lab] = ci
        else:
            cur = keep[lab]
            if (size, -comp_pixels[ci][0]) > (len(comp_pixels[cur]), -comp_pixels[cur][0]):
                keep[lab] = ci

    out = labels.copy()
    orphans = sorted(
        (ci for ci in range(nxt) if keep[comp_label[ci]] != ci),
        key=lambda ci: int(comp_pixels[ci][0]),
    )
    for ci in orphans:
        border: dict[int, int] = {}
        for p in comp_pixels[ci]:
            py, px = divmod(int(p), w)
            for qy, qx in ((py - 1, px), (py + 1, px), (py, px - 1), (py, px + 1)):
                if 0 <= qy < h and 0 <= qx < w and comp[qy, qx] != ci:
                    lab = int(out[qy, qx])
                    border[lab] = border.get(lab, 0) + 1
        if border:
            target = max(border.items(), key=lambda kv: (kv[1], -kv[0]))[0]
            ys, xs = np.divmod(comp_pixels[ci], w)
            out[ys, xs] = target
    return out


def generate_superpixels(image: np.ndarray, target_count: int, seed: int = 0) -> SuperpixelMap:
    """Grid-seeded k-means over (r, g, b, lam*x, lam*y) with connectivity
    cleanup. lam = 0.5 / grid-step so color dominates within a cell."""
    image = np.asarray(image, dtype=np.float64)
    c, h, w = image.shape
    if target_count < 1:
        raise ZeroTargetSize(f"target_count {target_count}")
    if target_count > h * w:
        raise TargetCountExceedsPixels(f"{target_count} regions for {h * w} pixels")

    step = math.sqrt(h * w / target_count)
    lam = 0.5 / step
    vecs = _five_vectors(image, lam).reshape(-1, 5)
    seeds = _grid_seeds(h, w, target_count)
    sy = np.clip(np.round(seeds[:, 0] - 0.5).astype(np.int64), 0, h - 1)
    sx = np.clip(np.round(seeds[:, 1] - 0.5).astype(np.int64), 0, w - 1)
    centers = vecs[sy * w + sx].copy()

    rng = np.random.default_rng(seed)  # only consulted to reseed empty clusters
    assign = np.zeros(h * w, dtype=np.int64)
    v_sq = (vecs ** 2).sum(axis=1)
    for _ in range(10):
        d = v_sq[:, None] + (centers ** 2).sum(axis=1)[None, :] - 2.0 * (vecs @ centers.T)
        assign = np.argmin(d, axis=1)
        sizes = np.bincount(assign, minlength=target_count)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, vecs)
        occupied = sizes > 0
        centers[occupied] = sums[occupied] / sizes[occupied, None]
        for k in np.flatnonzero(~occupied):
            centers[k] = vecs[int(rng.integers(0, h * w))]

    labels = assign.reshape(h, w).astype(np.int32)
    labels = _largest_components_cleanup(labels)
    # compact surviving labels in ascending order
    survivors = np.unique(labels)
    lut = np.full(int(survivors.max()) + 1, -1, dtype=np.int32)
    lut[survivors] = np.arange(len(survivors), dtype=np.int32)
    return validate_label_map(lut[labels], max_regions=target_count)
