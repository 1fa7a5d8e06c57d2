"""Dataset directory layout and loaders.

A dataset root contains ``frames/`` (images with zero-padded numeric names),
optionally ``labels/`` (16-bit instance-label images), ``mesh.obj``,
``poses.txt``, and ``embeddings/``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError
from .geometry import Geometry, load_obj, load_poses


@dataclass(frozen=True)
class DatasetLayout:
    root: Path
    frame_ids: tuple[int, ...]
    width: int
    height: int

    @property
    def labels_dir(self) -> Path | None:
        d = self.root / "labels"
        return d if d.is_dir() else None

    @property
    def mesh_path(self) -> Path | None:
        p = self.root / "mesh.obj"
        return p if p.is_file() else None

    @property
    def poses_path(self) -> Path | None:
        p = self.root / "poses.txt"
        return p if p.is_file() else None

    def has_geometry(self) -> bool:
        return self.mesh_path is not None and self.poses_path is not None


def open_dataset(root) -> DatasetLayout:
    root = Path(root)
    frames_dir = root / "frames"
    if not frames_dir.is_dir():
        raise ConfigurationError(f"{root}: missing frames/ directory")
    frame_ids = sorted(int(p.stem) for p in frames_dir.glob("*.png"))
    if not frame_ids:
        raise ConfigurationError(f"{frames_dir}: no frames found")
    with Image.open(frames_dir / f"{frame_ids[0]:06d}.png") as im:
        width, height = im.size
    return DatasetLayout(root=root, frame_ids=tuple(frame_ids), width=width, height=height)


def load_label_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im).astype(np.int32)


def load_labels(layout: DatasetLayout) -> dict[int, np.ndarray]:
    """Instance-label arrays per frame (pixel value = instance id + 1)."""
    if layout.labels_dir is None:
        raise ConfigurationError(f"{layout.root}: missing labels/ directory")
    return {f: load_label_image(layout.labels_dir / f"{f:06d}.png") for f in layout.frame_ids}


def ground_truth_from_labels(labels: dict[int, np.ndarray]) -> dict[int, dict[int, np.ndarray]]:
    """Per-frame {instance id: mask} maps, nonempty masks only."""
    gt: dict[int, dict[int, np.ndarray]] = {}
    for frame_id, lab in labels.items():
        gt[frame_id] = {int(v) - 1: lab == v for v in np.unique(lab) if v > 0}
    return gt


def load_geometry(layout: DatasetLayout) -> Geometry:
    if not layout.has_geometry():
        raise ConfigurationError(f"{layout.root}: mesh.obj and poses.txt are required")
    mesh = load_obj(layout.mesh_path)
    poses = load_poses(layout.poses_path)
    missing = [f for f in layout.frame_ids if f not in poses]
    if missing:
        raise ConfigurationError(f"{layout.root}: poses.txt lacks frames {missing[:5]}")
    return Geometry(mesh, poses, layout.width, layout.height)
