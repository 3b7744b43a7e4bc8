"""Command-line entry points for every pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error. Every artifact-writing
run emits manifest.json (command, config, seed, content hashes of inputs
and outputs) so identical runs are byte-verifiable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import applications
from .autodiff import backward, finite_diff_check, forward_record, value_of
from .costing import count_grouping_pipeline, count_nonlocal
from .errors import EngineError
from .graphs import HierarchyConfig, hierarchy_from_json, hierarchy_to_json
from .heads import DEMO_STRIDES, extract_demo_features
from .imageio import read_ppm, write_pgm
from .params import ModelParams, init_model_params
from .pipeline import run_pipeline
from .rle import mask_payload
from .tensor_io import load_tensor, save_tensor, validate_label_map
from .toydata import build_fixture_bundle, scene_gradcam_payloads, toy_config, write_toy_dataset
from .training import load_dataset, train_toy


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, seed: int, inputs: list[Path]):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {p.name: _sha256(p) for p in inputs},
        "outputs": {
            p.name: _sha256(p)
            for p in sorted(out_dir.iterdir())
            if p.is_file() and p.name != "manifest.json"
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--graph-width", type=int, default=256)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--em-iters", type=int, default=None, help="override the per-mode K")
    p.add_argument("--mode", choices=("train", "eval"), default="eval")
    p.add_argument("--no-tdmp", action="store_true")
    p.add_argument("--init", choices=("stride", "random"), default="stride")
    p.add_argument("--max-superpixels", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)


def _config_from_args(args) -> HierarchyConfig:
    kwargs = {}
    if args.em_iters is not None:
        kwargs = {"k_train": args.em_iters, "k_eval": args.em_iters}
    return HierarchyConfig(
        levels=args.levels,
        graph_width=args.graph_width,
        sigma=args.sigma,
        init=args.init,
        tdmp_enabled=not args.no_tdmp,
        max_superpixels=args.max_superpixels,
        **kwargs,
    )


def _load_inputs(args, cfg: HierarchyConfig):
    inputs: list[Path] = []
    sp_path = Path(args.labels)
    sp = validate_label_map(load_tensor(sp_path), max_regions=cfg.max_superpixels * 4)
    inputs.append(sp_path)
    if args.image is not None:
        image_path = Path(args.image)
        features = extract_demo_features(read_ppm(image_path))[: cfg.levels]
        inputs.append(image_path)
    else:
        features = []
        for f in args.features:
            path = Path(f)
            features.append(load_tensor(path).astype(np.float64))
            inputs.append(path)
        if len(features) != cfg.levels:
            raise UsageError(f"need {cfg.levels} feature tensors, got {len(features)}")
    if sp.num_regions > cfg.max_superpixels:
        from .superpixel import greedy_merge

        sp = greedy_merge(sp, features[0], cfg.max_superpixels)
    return features, sp, inputs


def _run_model(args, cfg: HierarchyConfig):
    features, sp, inputs = _load_inputs(args, cfg)
    channels = [f.shape[0] for f in features]
    model = init_model_params(cfg, channels, seed=args.seed)
    out = run_pipeline(features, sp, cfg, model, mode=args.mode, seed=args.seed)
    return out, sp, inputs, features


def _cmd_build(args) -> int:
    cfg = _config_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out, sp, inputs, _ = _run_model(args, cfg)
    (out_dir / "hierarchy.json").write_text(
        hierarchy_to_json(out.hierarchy, include_features=args.include_features)
    )
    save_tensor(out_dir / "labels.dgmt", sp.labels.astype(np.int32))
    for level, labels in enumerate(applications.grouping_maps(out.hierarchy, sp), start=1):
        hi = max(int(labels.max()), 1)
        write_pgm(out_dir / f"grouping_l{level}.pgm", (labels * (255 // hi)).astype(np.uint8))
    _write_manifest(out_dir, "build", cfg.to_dict(), args.seed, inputs)
    print(f"levels: {out.hierarchy.sizes}")
    return 0


def _cmd_pipeline(args) -> int:
    cfg = _config_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out, sp, inputs, _ = _run_model(args, cfg)
    (out_dir / "hierarchy.json").write_text(
        hierarchy_to_json(out.hierarchy, include_features=args.include_features)
    )
    save_tensor(out_dir / "labels.dgmt", sp.labels.astype(np.int32))
    for level, fh in enumerate(out.f_hat, start=1):
        save_tensor(out_dir / f"fhat_{level}.dgmt", np.asarray(value_of(fh), dtype=np.float32))
    _write_manifest(out_dir, "pipeline", cfg.to_dict(), args.seed, inputs)
    print(f"levels: {out.hierarchy.sizes}; wrote {cfg.levels} re-projected grids")
    return 0


def _cmd_train_toy(args) -> int:
    cfg = toy_config(levels=args.levels, width=args.graph_width, tdmp_enabled=not args.no_tdmp)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    history = train_toy(args.data, cfg, args.steps, args.lr, seed=args.seed)
    history.to_csv(out_dir / "history.csv")
    for name, arr in history.params.to_dict().items():
        save_tensor(out_dir / f"param_{name.replace('.', '_')}.dgmt", np.asarray(arr, dtype=np.float32))
    _write_manifest(out_dir, "train-toy", cfg.to_dict(), args.seed, [Path(args.data) / "meta.json"])
    first, last = history.totals[0], history.totals[-1]
    print(f"loss: {first:.4f} -> {last:.4f} over {args.steps} steps")
    return 0


def _parse_clicks(specs: list[str]):
    clicks = []
    for spec in specs:
        parts = spec.split(",")
        if len(parts) not in (2, 3):
            raise UsageError(f"bad click spec {spec!r}; expected x,y[,pos|neg]")
        x, y = int(parts[0]), int(parts[1])
        polarity = applications.POSITIVE
        if len(parts) == 3:
            if parts[2] not in ("pos", "neg"):
                raise UsageError(f"bad polarity {parts[2]!r}")
            polarity = applications.POSITIVE if parts[2] == "pos" else applications.NEGATIVE
        clicks.append(applications.Click(x=x, y=y, polarity=polarity))
    return clicks


def _cmd_click(args) -> int:
    bundle = Path(args.bundle)
    h = hierarchy_from_json((bundle / "hierarchy.json").read_text())
    sp = validate_label_map(load_tensor(bundle / "labels.dgmt"))
    clicks = applications.ClickSet(clicks=tuple(_parse_clicks(args.at)), level=args.level)
    mask = applications.click_propagate(h, sp, clicks)
    out_path = Path(args.out)
    write_pgm(out_path, mask.astype(np.uint8) * 255)
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(mask_payload(mask), sort_keys=True))
    print(f"mask covers {int(mask.sum())} pixels")
    return 0


def _cmd_gradcam(args) -> int:
    bundle = Path(args.bundle)
    h = hierarchy_from_json((bundle / "hierarchy.json").read_text())
    sp = validate_label_map(load_tensor(bundle / "labels.dgmt"))
    if args.grads is not None:
        grads = load_tensor(args.grads).astype(np.float64)
        _, pixel_heat = applications.graph_gradcam(h, args.level, grads, sp)
    else:
        payload_path = bundle / f"gradcam_l{args.level}.json"
        if not payload_path.exists():
            raise UsageError(
                "no precomputed heat in bundle; pass --grads or rebuild the bundle with `fixture`"
            )
        from .rle import rle_decode

        doc = json.loads(payload_path.read_text())
        pixel_heat = rle_decode(doc["rle"], doc["height"], doc["width"], dtype=np.uint8) / 255.0
    write_pgm(args.out, np.round(pixel_heat * 255.0).astype(np.uint8))
    print(f"heat peak {float(pixel_heat.max()):.3f}")
    return 0


def _cmd_flops(args) -> int:
    cfg = HierarchyConfig(
        levels=args.levels,
        graph_width=args.graph_width,
        tdmp_enabled=not args.no_tdmp,
        max_superpixels=args.max_superpixels,
    )
    side = args.resolution
    resolutions = [(side // s, side // s) for s in DEMO_STRIDES[: cfg.levels]]
    channels = [args.channels] * cfg.levels
    ours = count_grouping_pipeline(cfg, resolutions, channels)
    baseline = count_nonlocal(resolutions[0][0], resolutions[0][1], cfg.graph_width)
    print(ours.to_text())
    print()
    print(baseline.to_text())
    ratio = baseline.total_madds / ours.total_madds
    print(f"\nnon-local / grouping multiply-add ratio: {ratio:.1f}x")
    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps(
                {"grouping": json.loads(ours.to_json()), "nonlocal": json.loads(baseline.to_json())},
                sort_keys=True,
            )
        )
    return 0


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    size = 32
    labels = np.zeros((size, size), np.int32)
    cols = np.minimum((np.arange(size) * 3) // size, 2)
    rows = (np.arange(size) >= size // 2).astype(np.int32)
    labels = rows[:, None] * 3 + cols[None, :]
    sp = validate_label_map(labels)
    image = np.clip(rng.uniform(0.2, 0.8, size=(3, size, size)), 0, 1)
    features = extract_demo_features(image)[:2]
    cfg = HierarchyConfig(levels=2, graph_width=4, k_train=2)
    from .heads import TaskTargets
    from .params import ClassCounts

    h1, w1 = features[0].shape[1:]
    targets = TaskTargets(
        object=(rng.integers(0, 3, size=(h1, w1))).astype(np.int32),
        part=(rng.integers(0, 2, size=(h1, w1))).astype(np.int32),
        material=(rng.integers(0, 2, size=(h1, w1))).astype(np.int32),
        scene=0,
        texture=1,
    )
    model = init_model_params(
        cfg, [f.shape[0] for f in features],
        ClassCounts(object=3, part=2, material=2, scene=2, texture=2), seed=args.seed,
    )
    from .pipeline import make_loss_fn

    fn = make_loss_fn(features, sp, cfg, targets, model, mode="train", seed=args.seed)
    err = finite_diff_check(fn, model.to_dict(), args.eps)
    print(f"max relative error: {err:.3e}")
    return 0 if err < 1e-4 else 2


def _cmd_fixture(args) -> int:
    out_dir = Path(args.out)
    build_fixture_bundle(out_dir, seed=args.seed)
    _write_manifest(out_dir, "fixture", toy_config().to_dict(), args.seed, [])
    print(f"fixture bundle at {out_dir}")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    serve(Path(args.bundle), args.port, ui_dir=Path(args.ui) if args.ui else None)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="hiergraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="features + labels -> hierarchy JSON + grouping maps")
    p.add_argument("--features", nargs="*", default=[], help="per-level .dgmt tensors")
    p.add_argument("--image", default=None, help="PPM image for the demo extractor")
    p.add_argument("--labels", required=True, help="superpixel map .dgmt")
    p.add_argument("--out", required=True)
    p.add_argument("--include-features", action="store_true")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_build)

    p = sub.add_parser("pipeline", help="build + top-down + re-projection -> grids")
    p.add_argument("--features", nargs="*", default=[])
    p.add_argument("--image", default=None)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--include-features", action="store_true")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_pipeline)

    p = sub.add_parser("train-toy", help="gradient descent on a toy dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--graph-width", type=int, default=8)
    p.add_argument("--no-tdmp", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_train_toy)

    p = sub.add_parser("click", help="propagate clicks through a built hierarchy")
    p.add_argument("--bundle", required=True)
    p.add_argument("--at", action="append", required=True, help="x,y[,pos|neg] (repeatable)")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--out", default="mask.pgm")
    p.add_argument("--json-out", default=None)
    p.set_defaults(fn=_cmd_click)

    p = sub.add_parser("gradcam", help="vertex-activation heat map for a level")
    p.add_argument("--bundle", required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--grads", default=None, help="(N_l x D) .dgmt gradient tensor")
    p.add_argument("--out", default="heat.pgm")
    p.set_defaults(fn=_cmd_gradcam)

    p = sub.add_parser("flops", help="analytic cost report vs the non-local baseline")
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--graph-width", type=int, default=256)
    p.add_argument("--resolution", type=int, default=768)
    p.add_argument("--channels", type=int, default=12)
    p.add_argument("--max-superpixels", type=int, default=512)
    p.add_argument("--no-tdmp", action="store_true")
    p.add_argument("--json-out", default=None)
    p.set_defaults(fn=_cmd_flops)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full pipeline")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("fixture", help="write the bundled toy dataset + demo bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_fixture)

    p = sub.add_parser("serve", help="read-only HTTP API over a built bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--ui", default=None, help="static UI directory served at /")
    p.set_defaults(fn=_cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (EngineError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
