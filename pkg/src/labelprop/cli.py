"""Batch entry points: dataset generation, tracking runs, parameter sweeps,
evaluation, and spot checks.

Every flag can also be set through an ``SLP_``-prefixed environment variable
(flag wins over environment, environment over default), e.g. ``SLP_VARIANT``,
``SLP_K``, ``SLP_F``.
"""

from __future__ import annotations

import argparse
import os
import shlex
import sys
import time
from pathlib import Path

from .dataset import ground_truth_from_labels, load_geometry, load_label_image, load_labels, open_dataset
from .errors import ConfigurationError
from .evaluation import evaluate_run, spot_check, write_metrics_csv, write_summary_csv
from .propagation import SlpConfig, run_slp
from .runio import load_run_masks, read_manifest, save_run
from .segmenter import OracleSegmenter, StreamSegmenter
from .synthetic import SceneSpec, generate


def _env(name: str, default, cast=str):
    raw = os.environ.get(f"SLP_{name}")
    return cast(raw) if raw is not None else default


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", default=_env("VARIANT", "sam-only-1"))
    p.add_argument("--k", type=int, default=_env("K", 1, int))
    p.add_argument("--F", "--frame-skip", dest="frame_skip", type=int, default=_env("F", 0, int))
    p.add_argument("--g", "--grid-side", dest="grid_side", type=int, default=_env("G", 16, int))
    p.add_argument("--threshold", type=float, default=_env("THRESHOLD", 0.5, float))
    p.add_argument("--kernel-side", type=int, default=_env("KERNEL_SIDE", 5, int))
    p.add_argument("--iterations", type=int, default=_env("ITERATIONS", 3, int))
    p.add_argument("--seed", type=int, default=_env("SEED", 0, int))
    p.add_argument("--segmenter", choices=("oracle", "stream"), default=_env("SEGMENTER", "oracle"))
    p.add_argument("--noise", type=float, default=_env("NOISE", 0.05, float), help="oracle embedding noise sigma")
    p.add_argument("--dim", type=int, default=_env("DIM", 32, int), help="oracle embedding dimension")
    p.add_argument("--adapter-cmd", default=_env("ADAPTER_CMD", None), help="mask-server command for --segmenter stream")


def _config_from_args(args, **overrides) -> SlpConfig:
    values = dict(
        variant=args.variant,
        k=args.k,
        frame_skip=args.frame_skip,
        grid_side=args.grid_side,
        threshold=args.threshold,
        kernel_side=args.kernel_side,
        iterations=args.iterations,
        seed=args.seed,
    )
    values.update(overrides)
    return SlpConfig(**values)


def _make_segmenter(args, layout):
    if args.segmenter == "stream":
        if not args.adapter_cmd:
            raise ConfigurationError("--segmenter stream requires --adapter-cmd")
        return StreamSegmenter(shlex.split(args.adapter_cmd))
    return OracleSegmenter(load_labels(layout), dim=args.dim, seed=args.seed, noise=args.noise)


def _execute_run(args, layout, config: SlpConfig, out_dir: Path) -> dict:
    geometry = None
    pixel_match_ms = 0.0
    if config.uses_geometry:
        t0 = time.perf_counter()
        geometry = load_geometry(layout)
        geometry.precompute()
        pixel_match_ms = (time.perf_counter() - t0) * 1000.0

    segmenter = _make_segmenter(args, layout)
    try:
        result = run_slp(layout, config, segmenter, geometry)
    finally:
        if isinstance(segmenter, StreamSegmenter):
            segmenter.close()

    extra = {
        "segmenter": args.segmenter,
        "noise": args.noise,
        "dim": args.dim,
        "pixel_match_ms": f"{pixel_match_ms:.3f}",
        "mesh_faces": geometry.mesh.face_count if geometry else 0,
        "data": str(layout.root),
    }
    save_run(out_dir, result, config, extra)

    row = {
        "variant": config.variant,
        "time_min": f"{sum(result.frame_ms) / 60000.0:.6f}",
        "mean_iou": "",
        "tracking_losses": "",
        "k": config.k,
        "F": config.frame_skip,
    }
    if layout.labels_dir is not None:
        gt = ground_truth_from_labels(load_labels(layout))
        report = evaluate_run(gt, {f: result.masks_for_frame(f) for f in layout.frame_ids}, list(layout.frame_ids))
        row["mean_iou"] = f"{report.mean_iou:.6f}"
        row["tracking_losses"] = report.tracking_losses
    return row


def cmd_gen(args) -> int:
    spec = SceneSpec(
        seed=args.seed,
        object_count=args.objects,
        frame_count=args.frames,
        width=args.width,
        height=args.height,
        orbit_radius=args.orbit_radius,
        orbit_height=args.orbit_height,
        fov_deg=args.fov,
        spread=args.spread,
    )
    generate(spec, args.out)
    print(f"wrote {args.frames}-frame scene with {args.objects} objects to {args.out}")
    return 0


def cmd_run(args) -> int:
    layout = open_dataset(args.data)
    config = _config_from_args(args)
    out_dir = Path(args.out)
    row = _execute_run(args, layout, config, out_dir)
    write_metrics_csv(out_dir / "metrics.csv", [row])
    print(
        f"{config.variant}: {len(layout.frame_ids)} frames, "
        f"mean_iou={row['mean_iou'] or 'n/a'} losses={row['tracking_losses'] or 'n/a'}"
    )
    return 0


def cmd_sweep(args) -> int:
    layout = open_dataset(args.data)
    variants = args.variant.split(",")
    ks = [int(tok) for tok in str(args.k).split(",")]
    skips = [int(tok) for tok in str(args.frame_skip).split(",")]
    rows = []
    for variant in variants:
        for k in ks:
            for skip in skips:
                config = _config_from_args(args, variant=variant, k=k, frame_skip=skip)
                sub = Path(args.out) / f"{variant}-k{k}-F{skip}"
                rows.append(_execute_run(args, layout, config, sub))
                print(f"done {variant} k={k} F={skip}")
    write_metrics_csv(Path(args.out) / "metrics.csv", rows)
    return 0


def cmd_eval(args) -> int:
    layout = open_dataset(args.data)
    run_dir = Path(args.run)
    out_dir = Path(args.out) if args.out else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = read_manifest(run_dir / "manifest.txt")
    gt = ground_truth_from_labels(load_labels(layout))
    tracked = load_run_masks(run_dir)
    report = evaluate_run(gt, tracked, list(layout.frame_ids))

    write_metrics_csv(
        out_dir / "metrics.csv",
        [
            {
                "variant": manifest.get("variant", ""),
                "time_min": f"{float(manifest.get('total_ms', 0.0)) / 60000.0:.6f}",
                "mean_iou": f"{report.mean_iou:.6f}",
                "tracking_losses": report.tracking_losses,
                "k": manifest.get("k", ""),
                "F": manifest.get("F", ""),
            }
        ],
    )

    fn_a = fn_v = 0
    spot_iou = ""
    if args.author_labels:
        frames = _parse_frames(args.frames) if args.frames else list(layout.frame_ids)
        author = _load_label_dir(Path(args.author_labels), frames)
        volunteer = {f: gt[f] for f in frames if f in gt}
        fn_a, fn_v, mean = spot_check(author, volunteer, frames)
        spot_iou = f"{mean:.6f}"
    write_summary_csv(
        out_dir / "summary.csv",
        {
            "n_frames": len(layout.frame_ids),
            "t_sfm_min": f"{float(manifest.get('pixel_match_ms', 0.0)) / 60000.0:.6f}",
            "n_faces": manifest.get("mesh_faces", 0),
            "t_pxl_min": f"{float(manifest.get('pixel_match_ms', 0.0)) / 60000.0:.6f}",
            "fn_v": fn_v,
            "fn_a": fn_a,
            "mean_iou": spot_iou or f"{report.mean_iou:.6f}",
        },
    )
    print(f"mean_iou={report.mean_iou:.4f} tracking_losses={report.tracking_losses}")
    return 0


def _parse_frames(spec: str) -> list[int]:
    return [int(tok) for tok in spec.split(",") if tok.strip()]


def _load_label_dir(root: Path, frames: list[int]) -> dict[int, dict[int, object]]:
    labels = {f: load_label_image(root / f"{f:06d}.png") for f in frames}
    return ground_truth_from_labels(labels)


def cmd_spotcheck(args) -> int:
    frames = _parse_frames(args.frames)
    author = _load_label_dir(Path(args.author), frames)
    volunteer = _load_label_dir(Path(args.volunteer), frames)
    fn_a, fn_v, mean = spot_check(author, volunteer, frames)
    print(f"fn_a={fn_a} fn_v={fn_v} mean_iou={mean:.6f}")
    if args.out:
        write_summary_csv(
            Path(args.out),
            {
                "n_frames": len(frames),
                "t_sfm_min": 0,
                "n_faces": 0,
                "t_pxl_min": 0,
                "fn_v": fn_v,
                "fn_a": fn_a,
                "mean_iou": f"{mean:.6f}",
            },
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=_env("SEED", 0, int))
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--orbit-radius", type=float, default=4.5)
    p.add_argument("--orbit-height", type=float, default=3.2)
    p.add_argument("--fov", type=float, default=45.0)
    p.add_argument("--spread", type=float, default=0.9)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="track objects across a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the k x F parameter grid")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="score a run against ground-truth labels")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--author-labels", default=None, help="second label set for the spot-check columns")
    p.add_argument("--frames", default=None, help="comma-separated frame ids for the spot check")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spotcheck", help="compare two label sets on sampled frames")
    p.add_argument("--author", required=True)
    p.add_argument("--volunteer", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_spotcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
