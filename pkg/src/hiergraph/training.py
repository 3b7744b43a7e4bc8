"""Toy training loop: plain gradient descent with a poly-decayed rate.

A dataset is a directory of sample folders, each carrying either an
image.ppm or per-level feature tensors, a superpixel map, optional dense
label maps per task, and optional scene/texture labels; meta.json at the
dataset root declares the class counts.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import backward, forward_record, value_of
from .errors import InvalidConfig
from .graphs import HierarchyConfig
from .heads import TaskTargets, extract_demo_features
from .imageio import read_ppm
from .params import ClassCounts, ModelParams, init_model_params
from .pipeline import run_pipeline
from .superpixel import RegionAdjacency, build_rag, downsample_labels, greedy_merge
from .tensor_io import SuperpixelMap, load_tensor, validate_label_map

DENSE_TASKS = ("object", "part", "material")


@dataclass
class Sample:
    name: str
    features: list[np.ndarray]
    sp: SuperpixelMap
    rag: RegionAdjacency
    targets: TaskTargets


@dataclass
class DatasetMeta:
    counts: ClassCounts
    channels: list[int]


def poly_lr(base_lr: float, step: int, max_steps: int, power: float = 0.9) -> float:
    """Polynomial decay (1 - step/max_steps) ** power."""
    return base_lr * (1.0 - step / max_steps) ** power


def align_dense_target(labels: np.ndarray, h: int, w: int) -> np.ndarray:
    """Nearest-neighbor downsample of a dense label map (same half-pixel
    arithmetic as the feature pooling; -1 ignore labels pass through)."""
    src_h, src_w = labels.shape
    ys = np.clip(np.floor((np.arange(h) + 0.5) * src_h / h).astype(np.int64), 0, src_h - 1)
    xs = np.clip(np.floor((np.arange(w) + 0.5) * src_w / w).astype(np.int64), 0, src_w - 1)
    return labels[np.ix_(ys, xs)]


def _load_features(folder: Path, levels: int) -> list[np.ndarray]:
    image_path = folder / "image.ppm"
    if image_path.exists():
        feats = extract_demo_features(read_ppm(image_path))
        return [f for f in feats[:levels]]
    out = []
    for lvl in range(1, levels + 1):
        path = folder / f"feature_{lvl}.dgmt"
        if not path.exists():
            raise InvalidConfig(f"sample {folder.name} lacks image.ppm and {path.name}")
        out.append(load_tensor(path).astype(np.float64))
    return out


def load_sample(folder: Path, levels: int, max_regions: int) -> Sample:
    sp = validate_label_map(load_tensor(folder / "superpixels.dgmt"), max_regions=max_regions * 4)
    features = _load_features(folder, levels)
    if sp.num_regions > max_regions:
        sp = greedy_merge(sp, features[0], max_regions)
    _, h1, w1 = features[0].shape

    dense: dict[str, np.ndarray | None] = {}
    for task in DENSE_TASKS:
        path = folder / f"labels_{task}.dgmt"
        dense[task] = (
            align_dense_target(load_tensor(path), h1, w1) if path.exists() else None
        )
    scene = texture = None
    if (folder / "scene.txt").exists():
        scene = int((folder / "scene.txt").read_text().strip())
    if (folder / "texture.txt").exists():
        texture = int((folder / "texture.txt").read_text().strip())
    targets = TaskTargets(
        object=dense["object"], part=dense["part"], material=dense["material"],
        scene=scene, texture=texture,
    )
    return Sample(name=folder.name, features=features, sp=sp, rag=build_rag(sp), targets=targets)


def load_dataset(root, cfg: HierarchyConfig) -> tuple[list[Sample], DatasetMeta]:
    root = Path(root)
    meta_doc = json.loads((root / "meta.json").read_text())
    counts = ClassCounts(
        object=meta_doc["object_classes"],
        part=meta_doc["part_classes"],
        material=meta_doc["material_classes"],
        scene=meta_doc["scene_classes"],
        texture=meta_doc["texture_classes"],
    )
    folders = sorted(p for p in root.iterdir() if p.is_dir())
    if not folders:
        raise InvalidConfig(f"dataset {root} has no sample folders")
    samples = [load_sample(f, cfg.levels, cfg.max_superpixels) for f in folders]
    channels = [f.shape[0] for f in samples[0].features]
    return samples, DatasetMeta(counts=counts, channels=channels)


@dataclass
class TrainingHistory:
    rows: list[dict]
    params: ModelParams

    def to_csv(self, path) -> None:
        fieldnames = ["step", "lr", "total", "scene", "texture", "object", "part", "material"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: row.get(k, "") for k in fieldnames})

    @property
    def totals(self) -> list[float]:
        return [row["total"] for row in self.rows]


def train_toy(
    data_dir,
    cfg: HierarchyConfig,
    steps: int,
    base_lr: float = 0.1,
    *,
    seed: int = 0,
    detach_assignments: bool = False,
) -> TrainingHistory:
    """Gradient descent over every trainable weight. One sample per step
    (cycled in sorted order); losses are recorded before each update so
    rows[0] is the initial loss."""
    if steps < 1:
        raise InvalidConfig(f"steps must be >= 1, got {steps}")
    samples, meta = load_dataset(data_dir, cfg)
    model = init_model_params(cfg, meta.channels, meta.counts, seed=seed)

    rows = []
    for step in range(steps):
        lr = poly_lr(base_lr, step, steps)
        sample = samples[step % len(samples)]

        def run(param_dict):
            mp = ModelParams.from_dict(param_dict, model)
            return run_pipeline(
                sample.features, sample.sp, cfg, mp, sample.targets,
                mode="train", seed=seed, rag=sample.rag,
                detach_assignments=detach_assignments,
            )

        out, tape = forward_record(run, model.to_dict())
        grads = backward(tape, 1.0, out.total_loss)
        flat = {k: np.array(v, dtype=np.float64) for k, v in model.to_dict().items()}
        for name in flat:
            flat[name] = flat[name] - lr * grads[name]
        row = {"step": step, "lr": lr, "total": float(value_of(out.total_loss))}
        for task, term in out.loss_terms.items():
            row[task] = float(value_of(term))
        rows.append(row)
        model = ModelParams.from_dict(flat, model)
    return TrainingHistory(rows=rows, params=model)
