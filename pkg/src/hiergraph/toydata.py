"""Bundled synthetic fixtures: a 4-region parsing sample and a pre-built
hierarchy bundle for the CLI demos, the service, and the explorer UI."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import applications
from .autodiff import backward, forward_record, value_of
from .graphs import HierarchyConfig, hierarchy_to_json
from .imageio import write_pgm, write_ppm
from .params import ModelParams, init_model_params
from .pipeline import run_pipeline
from .rle import heat_payload
from .tensor_io import save_tensor
from .training import load_dataset

TOY_SIZE = 64
TOY_CLASSES = {
    "object_classes": 4,
    "part_classes": 2,
    "material_classes": 2,
    "scene_classes": 2,
    "texture_classes": 2,
}


def toy_image(size: int = TOY_SIZE, seed: int = 0) -> np.ndarray:
    """Four colored quadrants with a deterministic gradient and mild seeded
    texture so the demo features are informative."""
    rng = np.random.default_rng(seed)
    half = size // 2
    colors = np.array(
        [[0.85, 0.2, 0.2], [0.2, 0.75, 0.25], [0.25, 0.3, 0.85], [0.8, 0.8, 0.25]]
    )
    img = np.zeros((3, size, size), dtype=np.float64)
    ys, xs = np.mgrid[0:size, 0:size]
    quad = (ys >= half).astype(np.int64) * 2 + (xs >= half).astype(np.int64)
    for q in range(4):
        mask = quad == q
        for c in range(3):
            img[c][mask] = colors[q, c]
    ramp = 0.08 * (xs / size) + 0.06 * (ys / size)
    img += ramp[None]
    img += rng.normal(0.0, 0.015, size=(3, size, size))
    return np.clip(img, 0.0, 1.0)


def toy_labels(size: int = TOY_SIZE) -> dict[str, np.ndarray]:
    half = size // 2
    ys, xs = np.mgrid[0:size, 0:size]
    quad = ((ys >= half).astype(np.int32) * 2 + (xs >= half).astype(np.int32))
    part = ((ys % half) >= half // 2).astype(np.int32)
    material = (xs >= half).astype(np.int32)
    obj = quad.copy()
    for dense in (obj, part, material):
        dense[:2, :] = -1
        dense[-2:, :] = -1
        dense[:, :2] = -1
        dense[:, -2:] = -1
    return {"superpixels": quad, "object": obj, "part": part, "material": material}


def write_toy_dataset(root, seed: int = 0, size: int = TOY_SIZE) -> Path:
    """One-sample dataset: quadrant image, quadrant superpixels, dense and
    image-level labels, and the class-count manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "meta.json").write_text(json.dumps(TOY_CLASSES, sort_keys=True))
    sample = root / "sample_000"
    sample.mkdir(exist_ok=True)
    write_ppm(sample / "image.ppm", toy_image(size, seed))
    labels = toy_labels(size)
    save_tensor(sample / "superpixels.dgmt", labels["superpixels"].astype(np.int32))
    for task in ("object", "part", "material"):
        save_tensor(sample / f"labels_{task}.dgmt", labels[task].astype(np.int32))
    (sample / "scene.txt").write_text("0\n")
    (sample / "texture.txt").write_text("1\n")
    return root


def toy_config(levels: int = 2, width: int = 8, tdmp_enabled: bool = True) -> HierarchyConfig:
    return HierarchyConfig(levels=levels, graph_width=width, tdmp_enabled=tdmp_enabled)


def scene_gradcam_payloads(out, clazz: int, tape, sp) -> list[dict]:
    """Per-level heat from the scene logit's gradient at the bottom-up
    vertex features."""
    seed = np.zeros(value_of(out.logits.scene).shape)
    seed[clazz] = 1.0
    grads = backward(tape, seed, out.logits.scene)
    payloads = []
    for level in range(1, out.bottom_up.num_levels + 1):
        var = out.bottom_up.levels[level - 1].vertices
        g = grads.of(var)
        _, pixel_heat = applications.graph_gradcam(out.bottom_up, level, g, sp)
        payloads.append(heat_payload(pixel_heat))
    return payloads


def build_fixture_bundle(
    bundle_dir,
    dataset_dir=None,
    *,
    seed: int = 0,
    cfg: HierarchyConfig | None = None,
    mode: str = "eval",
) -> Path:
    """Build the demo bundle a `serve` instance loads: hierarchy JSON,
    superpixel map, source image, grouping maps, and Grad-CAM heats."""
    bundle_dir = Path(bundle_dir)
    bundle_dir.mkdir(parents=True, exist_ok=True)
    if dataset_dir is None:
        dataset_dir = bundle_dir / "dataset"
        write_toy_dataset(dataset_dir, seed=seed)
    cfg = cfg or toy_config()

    samples, meta = load_dataset(dataset_dir, cfg)
    sample = samples[0]
    model = init_model_params(cfg, meta.channels, meta.counts, seed=seed)

    def run(param_dict):
        mp = ModelParams.from_dict(param_dict, model)
        return run_pipeline(
            sample.features, sample.sp, cfg, mp, sample.targets,
            mode=mode, seed=seed, rag=sample.rag,
        )

    out, tape = forward_record(run, model.to_dict())

    (bundle_dir / "hierarchy.json").write_text(
        hierarchy_to_json(out.hierarchy, include_features=True)
    )
    save_tensor(bundle_dir / "labels.dgmt", sample.sp.labels.astype(np.int32))
    src_image = Path(dataset_dir) / "sample_000" / "image.ppm"
    if src_image.exists():
        (bundle_dir / "image.ppm").write_bytes(src_image.read_bytes())

    maps = applications.grouping_maps(out.hierarchy, sample.sp)
    for level, labels in enumerate(maps, start=1):
        hi = max(int(labels.max()), 1)
        write_pgm(bundle_dir / f"grouping_l{level}.pgm", (labels * (255 // hi)).astype(np.uint8))

    scene_class = sample.targets.scene or 0
    for level, payload in enumerate(scene_gradcam_payloads(out, scene_class, tape, sample.sp), start=1):
        (bundle_dir / f"gradcam_l{level}.json").write_text(json.dumps(payload, sort_keys=True))
    return bundle_dir
