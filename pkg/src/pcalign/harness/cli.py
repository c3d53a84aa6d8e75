"""Command-line front end.

Subcommands: gen, train, align, icp, eval, bench.  Settings come from
defaults, then an optional TOML config file ([scene], [lidar], [train],
[loss], [eval] sections), then explicit flags, in that order.

Exit codes: 0 success, 1 usage error, 2 data error (missing or corrupt
input files, mismatched predictions).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from ..alignnet import AlignNetParams, LossConfig, ModelConfig, align
from ..geom import GroundTransform
from ..icp import IcpConfig, icp_p2p
from ..synth import (
    GenerationError,
    LidarConfig,
    SceneConfig,
    demo_car_pool,
    generate_scenes,
    load_mesh_pool,
    read_dataset,
    write_dataset,
)
from .bench import bench, bench_icp, thread_cap
from .metrics import (
    Prediction,
    evaluate,
    format_report_text,
    read_predictions,
    write_predictions,
    write_report_csv,
    write_report_json,
)
from .sampling import sample_points
from .train import TrainConfig, TrainingDiverged, train


class DataError(Exception):
    """Missing or malformed input data; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _apply_thread_cap() -> None:
    cap = thread_cap()
    if cap is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(cap))


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"bad TOML in {path}: {exc}") from exc


def _section_config(cls, section: dict, **overrides):
    """Build a config dataclass from a TOML section plus non-None overrides."""
    known = {f.name for f in dataclasses.fields(cls)}
    bad = set(section) - known
    if bad:
        raise DataError(
            f"unknown {cls.__name__} settings: {', '.join(sorted(bad))}")
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad {cls.__name__} settings: {exc}") from exc


def _load_dataset(path):
    try:
        return read_dataset(path)
    except FileNotFoundError as exc:
        raise DataError(f"dataset not found: {path}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _load_checkpoint(path):
    try:
        return AlignNetParams.load(path)
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {path}") from exc
    except (ValueError, KeyError) as exc:
        raise DataError(f"bad checkpoint {path}: {exc}") from exc


def _ordered_predictions(preds, n_samples: int):
    by_id = {p.sample_id: p for p in preds}
    if len(by_id) != len(preds):
        raise DataError("duplicate sample_id in predictions")
    missing = [i for i in range(n_samples) if i not in by_id]
    if missing or len(preds) != n_samples:
        raise DataError(
            f"predictions do not cover the dataset: {len(preds)} records "
            f"for {n_samples} samples (first missing id: "
            f"{missing[0] if missing else 'n/a'})")
    return [by_id[i] for i in range(n_samples)]


def _cmd_gen(args) -> int:
    config = _load_config(args.config)
    scene_cfg = _section_config(SceneConfig, config.get("scene", {}),
                                seed=args.seed)
    lidar = _section_config(LidarConfig, config.get("lidar", {}))
    if args.mesh_root:
        try:
            meshes = load_mesh_pool(args.mesh_root,
                                    classes=args.classes.split(",") if args.classes else None)
        except (FileNotFoundError, ValueError) as exc:
            raise DataError(str(exc)) from exc
    else:
        meshes = demo_car_pool(args.pool_size, seed=scene_cfg.seed)
    try:
        samples = generate_scenes(meshes, scene_cfg, lidar, args.count,
                                  start_index=args.start_index)
    except GenerationError as exc:
        raise DataError(str(exc)) from exc
    write_dataset(samples, args.out, config={
        "scene": dataclasses.asdict(scene_cfg),
        "count": args.count,
        "start_index": args.start_index,
        "pool": args.mesh_root or f"demo:{args.pool_size}",
    })
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args.config)
    loss_cfg = _section_config(LossConfig, config.get("loss", {}))
    train_cfg = _section_config(
        TrainConfig, config.get("train", {}),
        epochs=args.epochs, batch=args.batch, n_points=args.n_points,
        seed=args.seed, checkpoint_every=args.checkpoint_every,
        dataset=args.dataset, loss=loss_cfg)
    if not train_cfg.dataset:
        raise DataError("no training dataset given (--dataset or [train].dataset)")
    samples = _load_dataset(train_cfg.dataset)
    try:
        result = train(samples, train_cfg, out_dir=args.out,
                       log=None if args.quiet else print)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"trained {train_cfg.epochs} epochs ({len(result.losses)} steps); "
          f"final checkpoint: {result.final_path}")
    return 0


def _predict_model(params, samples, n_points: int, batch: int, seed: int):
    rng = np.random.default_rng(seed)
    preds = []
    for lo in range(0, len(samples), batch):
        chunk = samples[lo:lo + batch]
        c1 = np.stack([sample_points(s.cloud1, n_points, rng) for s in chunk])
        c2 = np.stack([sample_points(s.cloud2, n_points, rng) for s in chunk])
        t0 = time.perf_counter()
        transforms = align(params, c1, c2)
        ms = 1e3 * (time.perf_counter() - t0) / len(chunk)
        for i, t in enumerate(transforms):
            preds.append(Prediction(sample_id=lo + i, transform=t, wall_ms=ms))
    return preds


def _cmd_align(args) -> int:
    params, ckpt_config = _load_checkpoint(args.checkpoint)
    samples = _load_dataset(args.dataset)
    n_points = args.n_points
    if n_points is None:
        n_points = int(ckpt_config.get("train", {}).get("n_points", 512))
    preds = _predict_model(params, samples, n_points, args.batch, args.seed or 0)
    write_predictions(preds, args.out)
    print(f"wrote {len(preds)} predictions to {args.out}")
    return 0


def _cmd_icp(args) -> int:
    samples = _load_dataset(args.dataset)
    cfg = IcpConfig(radius=args.radius, max_iterations=args.max_iterations)
    rng = np.random.default_rng(args.seed or 0)
    preds = []
    for i, s in enumerate(samples):
        c1, c2 = s.cloud1, s.cloud2
        if args.n_points:
            c1 = sample_points(c1, args.n_points, rng)
            c2 = sample_points(c2, args.n_points, rng)
        t0 = time.perf_counter()
        result = icp_p2p(c1, c2, cfg)
        ms = 1e3 * (time.perf_counter() - t0)
        preds.append(Prediction(sample_id=i, transform=result.transform,
                                wall_ms=ms))
    write_predictions(preds, args.out)
    print(f"wrote {len(preds)} predictions to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    config = _load_config(args.config)
    eval_cfg = config.get("eval", {})
    axis_symmetric = (args.axis_symmetric
                      if args.axis_symmetric is not None
                      else bool(eval_cfg.get("axis_symmetric", False)))
    flip = (args.flip_headings if args.flip_headings is not None
            else bool(eval_cfg.get("flip_headings", False)))
    samples = _load_dataset(args.dataset)
    try:
        preds = read_predictions(args.pred)
    except FileNotFoundError as exc:
        raise DataError(f"predictions not found: {args.pred}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    ordered = _ordered_predictions(preds, len(samples))
    report = evaluate(ordered, samples, axis_symmetric=axis_symmetric,
                      flip_headings=flip, method=args.method)
    write_report_json(report, args.out)
    if args.csv:
        write_report_csv(report, args.csv)
    print(format_report_text(report), end="")
    print(f"report written to {args.out}")
    return 0


def _cmd_bench(args) -> int:
    samples = _load_dataset(args.dataset)
    batch_sizes = tuple(int(b) for b in args.batch_sizes.split(","))
    out: dict = {"threads": thread_cap()}
    if args.checkpoint:
        params, _ = _load_checkpoint(args.checkpoint)
        label = str(args.checkpoint)
    else:
        params = AlignNetParams(ModelConfig(),
                                rng=np.random.default_rng(args.seed or 0))
        label = "untrained"
    report = bench(lambda a, b: align(params, a, b), samples,
                   batch_sizes=batch_sizes, n_points=args.n_points,
                   seed=args.seed or 0, label=label)
    out["model"] = report.to_dict()
    for b, row in sorted(report.per_batch.items()):
        print(f"model batch {b:>3}: {row['per_transform_ms']:8.3f} ms/transform")
    icp_row = bench_icp(samples, n_points=args.n_points, seed=args.seed or 0)
    out["icp"] = icp_row
    print(f"icp  per pair : {icp_row['mean_pair_ms']:8.3f} ms")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(out, fh, indent=2)
            fh.write("\n")
        print(f"timings written to {args.out}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--config", default=None, help="TOML config file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pcalign",
                     description="Point-cloud pair alignment toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[], help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--count", type=int, required=True, help="number of samples")
    p.add_argument("--start-index", type=int, default=0)
    p.add_argument("--mesh-root", default=None, help="mesh directory tree")
    p.add_argument("--classes", default=None, help="comma-separated class filter")
    p.add_argument("--pool-size", type=int, default=20,
                   help="procedural mesh pool size when no mesh root is given")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train the aligner")
    _add_common(p)
    p.add_argument("--dataset", default=None, help="training dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--n-points", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("align", help="predict transforms with a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="predictions JSONL path")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--n-points", type=int, default=None,
                   help="override the checkpoint's point count")
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("icp", help="predict transforms with the ICP baseline")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="predictions JSONL path")
    p.add_argument("--radius", type=float, default=0.1)
    p.add_argument("--max-iterations", type=int, default=30)
    p.add_argument("--n-points", type=int, default=0,
                   help="sample clouds to this size first (0: full clouds)")
    p.set_defaults(func=_cmd_icp)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True, help="predictions JSONL")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default="report.json")
    p.add_argument("--csv", default=None, help="also write a CSV table")
    p.add_argument("--method", default="", help="label stored in the report")
    p.add_argument("--axis-symmetric", action="store_true", default=None)
    p.add_argument("--flip-headings", action="store_true", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="time the aligners")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--batch-sizes", default="8,16,32,64")
    p.add_argument("--n-points", type=int, default=512)
    p.add_argument("--out", default=None, help="JSON output path")
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
