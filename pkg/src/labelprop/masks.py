"""Binary mask algebra: IoU, closing morphology, prompt grids, persistence.

Masks are boolean numpy arrays of shape (height, width). Prompt points are
(x, y) pixel coordinates, int32, listed row-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union; 0.0 when both masks are empty."""
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def closing(mask: np.ndarray, kernel_side: int = 5, iterations: int = 3) -> np.ndarray:
    """Repeated (dilate, erode) with a square kernel.

    Out-of-frame neighbors count as unset for both passes, so erosion shrinks
    at the frame border. Closing is extensive: no set pixel is ever lost.
    """
    if kernel_side % 2 == 0 or kernel_side < 3:
        raise ValueError(f"kernel_side must be odd and >= 3, got {kernel_side}")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    structure = np.ones((kernel_side, kernel_side), dtype=bool)
    out = mask
    for _ in range(iterations):
        dilated = ndimage.binary_dilation(out, structure=structure, border_value=0)
        out = ndimage.binary_erosion(dilated, structure=structure, border_value=0)
        out |= mask  # guard extensivity against border erosion
    return out


@dataclass(frozen=True)
class PromptGrid:
    """A g x g lattice of candidate single-pixel prompts, possibly filtered."""

    side: int
    points: np.ndarray  # (N, 2) int32, (x, y), row-major order


def make_grid(side: int, width: int, height: int) -> PromptGrid:
    """Points at the cell centers of a uniform side x side partition."""
    if side < 1:
        raise ValueError(f"grid side must be >= 1, got {side}")
    xs = ((np.arange(side) + 0.5) * width / side).astype(np.int32)
    ys = ((np.arange(side) + 0.5) * height / side).astype(np.int32)
    gx, gy = np.meshgrid(xs, ys)
    return PromptGrid(side=side, points=np.column_stack([gx.ravel(), gy.ravel()]).astype(np.int32))


def filter_prompts(grid: PromptGrid, seen: np.ndarray) -> PromptGrid:
    """Retain exactly the points whose seen-mask bit is unset, order preserved."""
    keep = ~seen[grid.points[:, 1], grid.points[:, 0]]
    return PromptGrid(side=grid.side, points=grid.points[keep])


# ---------------------------------------------------------------------------
# Persistence: P4 PBM masks plus a text index
# ---------------------------------------------------------------------------


def write_pbm(mask: np.ndarray, path) -> None:
    h, w = mask.shape
    header = f"P4\n{w} {h}\n".encode("ascii")
    packed = np.packbits(mask.astype(np.uint8), axis=1)
    Path(path).write_bytes(header + packed.tobytes())


def read_pbm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P4"):
        raise ValueError(f"{path}: not a P4 bitmap")
    # header: magic, whitespace, width, whitespace, height, single whitespace
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 2:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1
    w, h = int(fields[0]), int(fields[1])
    row_bytes = (w + 7) // 8
    raw = np.frombuffer(data[pos : pos + h * row_bytes], dtype=np.uint8).reshape(h, row_bytes)
    bits = np.unpackbits(raw, axis=1)[:, :w]
    return bits.astype(bool)


def write_mask_index(index: dict[int, list[tuple[int, str]]], path) -> None:
    """Text index: one `object_id frame_id mask_path` line per stored mask."""
    lines = []
    for obj_id in sorted(index):
        for frame_id, rel_path in sorted(index[obj_id]):
            lines.append(f"{obj_id} {frame_id} {rel_path}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_mask_index(path) -> dict[int, list[tuple[int, str]]]:
    index: dict[int, list[tuple[int, str]]] = {}
    for raw in Path(path).read_text().splitlines():
        if not raw.strip():
            continue
        obj_s, frame_s, rel_path = raw.split(maxsplit=2)
        index.setdefault(int(obj_s), []).append((int(frame_s), rel_path))
    return index
