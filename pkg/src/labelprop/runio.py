"""Run-output persistence: PBM mask trees, the mask index, and the
run manifest (config, counters, stage timings as `key value` text)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .masks import read_mask_index, read_pbm, write_mask_index, write_pbm
from .propagation import SlpConfig, SlpResult


def save_run(out_dir, result: SlpResult, config: SlpConfig, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    masks_dir = out / "masks"
    masks_dir.mkdir(parents=True, exist_ok=True)
    index: dict[int, list[tuple[int, str]]] = {}
    for obj in result.objects:
        entries = []
        for frame_id, mask in sorted(obj.history.items()):
            rel = f"masks/{obj.id:04d}_{frame_id:06d}.pbm"
            write_pbm(mask, out / rel)
            entries.append((frame_id, rel))
        index[obj.id] = entries
    write_mask_index(index, out / "index.txt")

    manifest: dict[str, object] = {
        "variant": config.variant,
        "k": config.k,
        "F": config.frame_skip,
        "g": config.grid_side,
        "threshold": config.threshold,
        "kernel_side": config.kernel_side,
        "iterations": config.iterations,
        "seed": config.seed,
        "frames": len(result.frame_ms),
        "objects": len(result.objects),
        "find_object_calls": result.counters["find_object_calls"],
        "get_masks_calls": result.counters["get_masks_calls"],
        "encode_ms": f"{result.stage_ms['encode']:.3f}",
        "find_ms": f"{result.stage_ms['find']:.3f}",
        "discover_ms": f"{result.stage_ms['discover']:.3f}",
        "total_ms": f"{sum(result.frame_ms):.3f}",
    }
    if extra:
        manifest.update(extra)
    write_manifest(out / "manifest.txt", manifest)
    return out


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text("".join(f"{key} {value}\n" for key, value in manifest.items()))


def read_manifest(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, value = line.partition(" ")
            out[key] = value
    return out


def load_run_masks(run_dir) -> dict[int, dict[int, np.ndarray]]:
    """Masks grouped per frame: {frame_id: {object_id: mask}}."""
    run = Path(run_dir)
    index = read_mask_index(run / "index.txt")
    by_frame: dict[int, dict[int, np.ndarray]] = {}
    for obj_id, entries in index.items():
        for frame_id, rel in entries:
            by_frame.setdefault(frame_id, {})[obj_id] = read_pbm(run / rel)
    return by_frame
