from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from labelprop.synthetic import SceneSpec, generate


def mask_from_strings(rows: list[str]) -> np.ndarray:
    """Build a boolean mask from strings of '.' and '#'."""
    return np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)


@pytest.fixture(scope="session")
def small_scene(tmp_path_factory) -> Path:
    """A 3-object, 10-frame, 64x64 scene shared by fast tests."""
    root = tmp_path_factory.mktemp("scene-small")
    generate(SceneSpec(seed=11, object_count=3, frame_count=10, width=64, height=64), root)
    return root
