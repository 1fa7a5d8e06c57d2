"""Per-frame object tracking: the main propagation loop and both object
finders (visual-feature search and mesh-face reprojection).

Four variants are exposed through ``SlpConfig.variant``:

* ``sam-only-1``  score every pixel against the object's feature vector and
  prompt with the k best.
* ``sam-only-2``  hill-climb from the last prompt location; single-pixel
  prompt.
* ``sfm-sam-1``   score only the pixels that observe the object's mesh faces;
  k-best prompt, visual feature tracked.
* ``sfm-sam-2``   prompt with k random pixels from the matching set; no
  visual features, no threshold gate.

Both geometric variants update the object's face set from the returned mask:
faces visible under the mask are added, faces visible outside it are removed,
faces out of view are kept.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .geometry import Geometry, faces_of_pixels, pixels_of_faces
from .masks import closing, make_grid
from .segmenter import Segmenter, normalize_rows

VARIANTS = ("sam-only-1", "sam-only-2", "sfm-sam-1", "sfm-sam-2")

_RNG_SALT = 0x0B1EC7


@dataclass
class SlpConfig:
    """Run parameters. ``frame_skip`` is the number of frames skipped between
    searches for new objects, ``grid_side`` the prompt-lattice side."""

    variant: str = "sam-only-1"
    k: int = 1
    frame_skip: int = 0
    grid_side: int = 16
    threshold: float = 0.5
    kernel_side: int = 5
    iterations: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if self.frame_skip < 0:
            raise ConfigurationError("frame_skip must be >= 0")
        if self.grid_side < 1:
            raise ConfigurationError("grid_side must be >= 1")
        if not -1.0 <= self.threshold <= 1.0:
            raise ConfigurationError("threshold must lie in [-1, 1]")
        if self.kernel_side % 2 == 0 or self.kernel_side < 3:
            raise ConfigurationError("kernel_side must be odd and >= 3")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")

    @property
    def uses_features(self) -> bool:
        return self.variant != "sfm-sam-2"

    @property
    def uses_geometry(self) -> bool:
        return self.variant.startswith("sfm-sam")


@dataclass
class TrackedObject:
    """One tracked instance: characteristic features plus per-frame masks."""

    id: int
    feature: np.ndarray | None = None
    last_prompt: np.ndarray | None = None
    faces: set[int] = field(default_factory=set)
    history: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class FindResult:
    mask: np.ndarray
    prompt: np.ndarray
    feature: np.ndarray | None


@dataclass
class SlpResult:
    objects: list[TrackedObject]
    frame_ms: list[float]
    counters: dict[str, int]
    stage_ms: dict[str, float]

    def masks_for_frame(self, frame_id: int) -> dict[int, np.ndarray]:
        return {o.id: o.history[frame_id] for o in self.objects if frame_id in o.history}


# ---------------------------------------------------------------------------
# Prompt search primitives
# ---------------------------------------------------------------------------


def hill_climb(score_at, start: tuple[int, int], shape: tuple[int, int]) -> tuple[int, int]:
    """Greedy 8-neighborhood ascent from ``start``.

    Moves to the highest-scoring neighbor while one strictly beats the
    current pixel; neighbor ties resolve to the first in row-major order.
    Returns an (x, y) local maximum under 8-connectivity.
    """
    height, width = shape
    x, y = int(start[0]), int(start[1])
    if not (0 <= x < width and 0 <= y < height):
        raise ValueError(f"start {start} outside {width}x{height} frame")
    current = score_at(x, y)
    while True:
        best_score = current
        best_xy = None
        for ny in (y - 1, y, y + 1):
            if not 0 <= ny < height:
                continue
            for nx in (x - 1, x, x + 1):
                if (nx == x and ny == y) or not 0 <= nx < width:
                    continue
                s = score_at(nx, ny)
                if s > best_score:
                    best_score = s
                    best_xy = (nx, ny)
        if best_xy is None:
            return (x, y)
        x, y = best_xy
        current = best_score


def _k_best(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest scores; ties resolve in row-major order."""
    k = min(k, scores.size)
    if k == 1:
        return np.array([int(np.argmax(scores))])
    return np.argsort(-scores, kind="stable")[:k]


def _mean_feature(field: np.ndarray, points: np.ndarray) -> np.ndarray:
    vecs = field[points[:, 1], points[:, 0]]
    if len(vecs) == 1:
        return vecs[0].copy()
    return normalize_rows(vecs.mean(axis=0))


# ---------------------------------------------------------------------------
# FIND_OBJECT implementations
# ---------------------------------------------------------------------------


def find_object_sam_only(
    frame_id: int,
    obj: TrackedObject,
    segmenter: Segmenter,
    k: int,
    threshold: float,
    update_features: bool = True,
) -> FindResult | None:
    """Locate a known object by its visual feature alone.

    ``k > 0`` scores every pixel and prompts with the k best; ``k <= 0``
    hill-climbs from the object's last prompt and uses a single pixel. If the
    best score falls below ``threshold`` the object is declared absent and
    left untouched. ``update_features`` exists for harnesses that need the
    characteristic feature frozen.
    """
    if obj.feature is None:
        raise ValueError(f"object {obj.id} has no characteristic feature")
    field = segmenter.encode_image(frame_id)
    height, width, _ = field.shape

    if k > 0:
        scores = field.reshape(-1, field.shape[2]) @ obj.feature
        flat = _k_best(scores, k)
        best = float(scores[flat[0]])
        points = np.column_stack([flat % width, flat // width]).astype(np.int32)
    else:
        if obj.last_prompt is None:
            raise ValueError(f"object {obj.id} has no last prompt to hill-climb from")
        start = (int(obj.last_prompt[0, 0]), int(obj.last_prompt[0, 1]))
        peak = hill_climb(lambda px, py: float(field[py, px] @ obj.feature), start, (height, width))
        best = float(field[peak[1], peak[0]] @ obj.feature)
        points = np.array([peak], dtype=np.int32)

    if best < threshold:
        return None
    if update_features:
        obj.feature = _mean_feature(field, points)
        obj.last_prompt = points
    mask = segmenter.get_mask(frame_id, points)
    return FindResult(mask=mask, prompt=points, feature=obj.feature)


def find_object_sfm_sam(
    frame_id: int,
    obj: TrackedObject,
    segmenter: Segmenter,
    geometry: Geometry,
    k: int,
    is_random: bool,
    rng: np.random.Generator | None,
    threshold: float,
    update_features: bool = True,
) -> FindResult | None:
    """Locate a known object through its mesh faces.

    The matching set is every pixel currently observing one of the object's
    faces; the prompt is drawn from it (k random pixels, or the k best by
    visual score with a threshold gate). The face set is then reconciled
    against the returned mask: visible faces under the mask are kept or
    added, visible faces outside it are dropped, out-of-view faces persist.
    """
    if not obj.faces:
        return None
    buf = geometry.buffer(frame_id)
    obj_pixels = pixels_of_faces(buf, obj.faces)
    ys, xs = np.nonzero(obj_pixels)
    if len(ys) == 0:
        return None

    if is_random:
        if rng is None:
            raise ValueError("random prompt selection needs an RNG stream")
        take = min(k, len(ys))
        pick = rng.choice(len(ys), size=take, replace=False)
        points = np.column_stack([xs[pick], ys[pick]]).astype(np.int32)
    else:
        if obj.feature is None:
            raise ValueError(f"object {obj.id} has no characteristic feature")
        field = segmenter.encode_image(frame_id)
        scores = field[ys, xs] @ obj.feature
        pick = _k_best(scores, k)
        if float(scores[pick[0]]) < threshold:
            return None
        points = np.column_stack([xs[pick], ys[pick]]).astype(np.int32)
        if update_features:
            obj.feature = _mean_feature(field, points)
            obj.last_prompt = points

    mask = segmenter.get_mask(frame_id, points)
    removed = faces_of_pixels(buf, obj_pixels & ~mask)
    added = faces_of_pixels(buf, mask)
    obj.faces = (obj.faces - removed) | added
    return FindResult(mask=mask, prompt=points, feature=obj.feature)


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------


def run_slp(dataset, config: SlpConfig, segmenter: Segmenter, geometry: Geometry | None = None) -> SlpResult:
    """Track objects across every frame of ``dataset``.

    ``dataset`` needs ``frame_ids``, ``width`` and ``height`` attributes.
    Per frame: known objects are re-found in ascending id order and their
    masks accumulate into the seen mask; when the skip counter reaches
    ``frame_skip``, the closed seen mask filters a prompt grid and every
    surviving proposal becomes a new tracked object.
    """
    if config.uses_geometry and geometry is None:
        raise ConfigurationError(f"variant {config.variant} requires mesh geometry")

    grid = make_grid(config.grid_side, dataset.width, dataset.height)
    objects: list[TrackedObject] = []
    rng_streams: dict[int, np.random.Generator] = {}
    counters = {"find_object_calls": 0, "get_masks_calls": 0}
    stage_ms = {"encode": 0.0, "find": 0.0, "discover": 0.0}
    frame_ms: list[float] = []
    skip_counter = 0
    next_id = 0

    is_random = config.variant == "sfm-sam-2"
    hill = config.variant == "sam-only-2"

    for frame_id in dataset.frame_ids:
        frame_start = time.perf_counter()

        if config.uses_features and objects:
            t0 = time.perf_counter()
            segmenter.encode_image(frame_id)
            stage_ms["encode"] += (time.perf_counter() - t0) * 1000.0

        seen = np.zeros((dataset.height, dataset.width), dtype=bool)
        t0 = time.perf_counter()
        for obj in objects:
            counters["find_object_calls"] += 1
            if config.uses_geometry:
                if is_random and obj.id not in rng_streams:
                    rng_streams[obj.id] = np.random.default_rng([config.seed, _RNG_SALT, obj.id])
                result = find_object_sfm_sam(
                    frame_id,
                    obj,
                    segmenter,
                    geometry,
                    config.k,
                    is_random,
                    rng_streams.get(obj.id),
                    config.threshold,
                )
            else:
                result = find_object_sam_only(
                    frame_id, obj, segmenter, config.k if not hill else 0, config.threshold
                )
            if result is not None and result.mask.any():
                obj.history[frame_id] = result.mask
                seen |= result.mask
        stage_ms["find"] += (time.perf_counter() - t0) * 1000.0

        if skip_counter >= config.frame_skip:
            t0 = time.perf_counter()
            seen_closed = closing(seen, config.kernel_side, config.iterations)
            proposals = segmenter.get_masks(frame_id, seen_closed, grid)
            counters["get_masks_calls"] += 1
            for prop in proposals:
                faces = faces_of_pixels(geometry.buffer(frame_id), prop.mask) if config.uses_geometry else set()
                objects.append(
                    TrackedObject(
                        id=next_id,
                        feature=prop.feature.copy(),
                        last_prompt=prop.prompt.copy(),
                        faces=faces,
                        history={frame_id: prop.mask},
                    )
                )
                next_id += 1
            skip_counter = 0
            stage_ms["discover"] += (time.perf_counter() - t0) * 1000.0
        else:
            skip_counter += 1

        frame_ms.append((time.perf_counter() - frame_start) * 1000.0)

    return SlpResult(objects=objects, frame_ms=frame_ms, counters=counters, stage_ms=stage_ms)
