"""Tests for the tracking loop, both object finders, and hill climbing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from labelprop.dataset import ground_truth_from_labels, load_geometry, load_labels, open_dataset
from labelprop.errors import ConfigurationError
from labelprop.evaluation import evaluate_run
from labelprop.geometry import faces_of_pixels, pixels_of_faces
from labelprop.propagation import (
    SlpConfig,
    TrackedObject,
    find_object_sam_only,
    find_object_sfm_sam,
    hill_climb,
    run_slp,
)
from labelprop.segmenter import OracleSegmenter, Segmenter


@dataclass(frozen=True)
class FakeDataset:
    frame_ids: tuple[int, ...]
    width: int
    height: int


class StubSegmenter(Segmenter):
    """Fixed feature field; masks are 3x3 blocks around the first prompt point."""

    def __init__(self, field: np.ndarray):
        self.field = field

    def encode_image(self, frame_id):
        return self.field

    def get_mask(self, frame_id, points):
        h, w, _ = self.field.shape
        mask = np.zeros((h, w), dtype=bool)
        x, y = int(points[0, 0]), int(points[0, 1])
        mask[max(0, y - 1) : y + 2, max(0, x - 1) : x + 2] = True
        return mask


def _basis_field(height: int, width: int, gains: np.ndarray) -> np.ndarray:
    """Field whose score against e0 equals ``gains`` (values in (0, 1))."""
    field = np.zeros((height, width, 4), dtype=np.float32)
    field[..., 0] = gains
    field[..., 1] = np.sqrt(1.0 - gains.astype(np.float64) ** 2)
    return field


def _gaussian_scores(height, width, cx, cy, sigma) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width]
    return 0.1 + 0.85 * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma**2))


class Recorder(Segmenter):
    """Wraps a segmenter and records every discovery call."""

    def __init__(self, inner: Segmenter):
        self.inner = inner
        self.discoveries: list[tuple[int, np.ndarray, list]] = []

    def encode_image(self, frame_id):
        return self.inner.encode_image(frame_id)

    def get_mask(self, frame_id, points):
        return self.inner.get_mask(frame_id, points)

    def get_masks(self, frame_id, seen, grid):
        proposals = self.inner.get_masks(frame_id, seen, grid)
        self.discoveries.append((frame_id, seen.copy(), proposals))
        return proposals


# ---------------------------------------------------------------------------
# hill_climb
# ---------------------------------------------------------------------------


class TestHillClimb:
    def test_start_at_global_max_stays(self):
        scores = _gaussian_scores(16, 16, 9, 6, 3.0)
        peak = hill_climb(lambda x, y: scores[y, x], (9, 6), scores.shape)
        assert peak == (9, 6)

    def test_linear_ramp_reaches_corner(self):
        ys, xs = np.mgrid[0:12, 0:12]
        scores = xs + 2 * ys
        peak = hill_climb(lambda x, y: scores[y, x], (0, 0), scores.shape)
        assert peak == (11, 11)

    def test_unimodal_fields_reach_argmax(self):
        rng = np.random.default_rng(17)
        for _ in range(30):
            cx, cy = rng.uniform(2, 29, size=2)
            scores = _gaussian_scores(32, 32, cx, cy, rng.uniform(2.0, 8.0))
            start = (int(rng.integers(0, 32)), int(rng.integers(0, 32)))
            peak = hill_climb(lambda x, y: scores[y, x], start, scores.shape)
            flat = int(np.argmax(scores))
            assert peak == (flat % 32, flat // 32)

    def test_result_is_8_connected_local_max(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            scores = rng.random((32, 32))
            start = (int(rng.integers(0, 32)), int(rng.integers(0, 32)))
            x, y = hill_climb(lambda px, py: scores[py, px], start, scores.shape)
            neighborhood = scores[max(0, y - 1) : y + 2, max(0, x - 1) : x + 2]
            assert scores[y, x] >= neighborhood.max()

    def test_out_of_frame_start_rejected(self):
        with pytest.raises(ValueError):
            hill_climb(lambda x, y: 0.0, (99, 0), (8, 8))


# ---------------------------------------------------------------------------
# find_object_sam_only
# ---------------------------------------------------------------------------


class TestFindObjectSamOnly:
    def test_unique_argmax_prompts_there(self):
        gains = np.full((8, 8), 0.3)
        gains[2, 3] = 1.0
        seg = StubSegmenter(_basis_field(8, 8, gains))
        obj = TrackedObject(id=0, feature=np.array([1, 0, 0, 0], dtype=np.float32))
        result = find_object_sam_only(0, obj, seg, k=1, threshold=0.5)
        assert result is not None
        assert result.prompt.tolist() == [[3, 2]]
        assert result.mask.any()
        assert np.allclose(obj.feature, seg.field[2, 3])
        assert obj.last_prompt.tolist() == [[3, 2]]

    def test_below_threshold_returns_absent_and_leaves_object(self):
        gains = np.full((8, 8), 0.3)
        seg = StubSegmenter(_basis_field(8, 8, gains))
        feature = np.array([1, 0, 0, 0], dtype=np.float32)
        obj = TrackedObject(id=0, feature=feature.copy(), last_prompt=np.array([[1, 1]], dtype=np.int32))
        assert find_object_sam_only(0, obj, seg, k=1, threshold=0.5) is None
        assert np.array_equal(obj.feature, feature)
        assert obj.last_prompt.tolist() == [[1, 1]]

    def test_k_best_takes_k_highest_row_major_on_ties(self):
        gains = np.full((4, 4), 0.2)
        gains[1, 1] = gains[1, 2] = gains[2, 0] = 0.9  # three-way tie
        seg = StubSegmenter(_basis_field(4, 4, gains))
        obj = TrackedObject(id=0, feature=np.array([1, 0, 0, 0], dtype=np.float32))
        result = find_object_sam_only(0, obj, seg, k=3, threshold=0.1)
        assert result.prompt.tolist() == [[1, 1], [2, 1], [0, 2]]

    def test_k_greater_than_one_updates_feature_to_mean(self):
        gains = np.full((4, 4), 0.2)
        gains[0, 0] = 0.95
        gains[3, 3] = 0.9
        field = _basis_field(4, 4, gains)
        seg = StubSegmenter(field)
        obj = TrackedObject(id=0, feature=np.array([1, 0, 0, 0], dtype=np.float32))
        result = find_object_sam_only(0, obj, seg, k=2, threshold=0.1)
        expected = field[0, 0] + field[3, 3]
        expected = expected / np.linalg.norm(expected)
        assert np.allclose(result.feature, expected, atol=1e-6)

    def test_hill_climb_mode_matches_exhaustive_argmax(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            cx, cy = rng.uniform(3, 12, size=2)
            gains = _gaussian_scores(16, 16, cx, cy, rng.uniform(2.0, 5.0))
            seg = StubSegmenter(_basis_field(16, 16, gains))
            obj = TrackedObject(
                id=0,
                feature=np.array([1, 0, 0, 0], dtype=np.float32),
                last_prompt=np.array([[0, 0]], dtype=np.int32),
            )
            result = find_object_sam_only(0, obj, seg, k=0, threshold=0.0)
            flat = int(np.argmax(gains))
            assert result.prompt.tolist() == [[flat % 16, flat // 16]]

    def test_hill_climb_without_last_prompt_is_contract_violation(self):
        seg = StubSegmenter(_basis_field(8, 8, np.full((8, 8), 0.5)))
        obj = TrackedObject(id=0, feature=np.array([1, 0, 0, 0], dtype=np.float32))
        with pytest.raises(ValueError):
            find_object_sam_only(0, obj, seg, k=0, threshold=0.0)

    def test_threshold_monotonicity_with_frozen_features(self, small_scene):
        layout = open_dataset(small_scene)
        labels = load_labels(layout)
        oracle = OracleSegmenter(labels, seed=4, noise=0.3)
        gt0 = ground_truth_from_labels(labels)[0]
        inst = sorted(gt0)[1]
        field0 = oracle.encode_image(0)
        ys, xs = np.nonzero(gt0[inst])
        base_feature = field0[ys[0], xs[0]].copy()

        def successes(threshold: float) -> int:
            obj = TrackedObject(id=0, feature=base_feature.copy())
            count = 0
            for frame_id in layout.frame_ids:
                if find_object_sam_only(frame_id, obj, oracle, k=1, threshold=threshold, update_features=False):
                    count += 1
            return count

        counts = [successes(t) for t in (-1.0, 0.0, 0.4, 0.7, 0.9, 0.99, 1.01)]
        assert all(a >= b for a, b in zip(counts, counts[1:])), counts
        assert counts[0] == len(layout.frame_ids), "threshold -1 can never fail"
        assert counts[-1] == 0, "threshold above 1 can never succeed"


# ---------------------------------------------------------------------------
# find_object_sfm_sam
# ---------------------------------------------------------------------------


@pytest.fixture()
def scene_parts(small_scene):
    layout = open_dataset(small_scene)
    labels = load_labels(layout)
    return (
        layout,
        labels,
        ground_truth_from_labels(labels),
        load_geometry(layout),
        OracleSegmenter(labels, seed=2, noise=0.05),
    )


class TestFindObjectSfmSam:
    def test_empty_faces_returns_absent(self, scene_parts):
        _, _, _, geometry, oracle = scene_parts
        obj = TrackedObject(id=0, faces=set())
        rng = np.random.default_rng(0)
        assert find_object_sfm_sam(0, obj, oracle, geometry, 1, True, rng, 0.5) is None

    def test_invisible_faces_return_absent_unchanged(self, scene_parts):
        """Faces that project nowhere this frame leave the object untouched."""
        _, _, _, geometry, oracle = scene_parts
        buf = geometry.buffer(0)
        visible = faces_of_pixels(buf, buf != -1)
        invisible = set(range(geometry.mesh.face_count)) - visible
        assert invisible, "scene should have some hidden faces"
        obj = TrackedObject(id=0, faces=set(invisible))
        rng = np.random.default_rng(0)
        assert find_object_sfm_sam(0, obj, oracle, geometry, 1, True, rng, 0.5) is None
        assert obj.faces == invisible

    def test_random_prompt_tracks_instance_exactly(self, scene_parts):
        _, _, gt, geometry, oracle = scene_parts
        inst = 1
        buf0 = geometry.buffer(0)
        obj = TrackedObject(id=0, faces=faces_of_pixels(buf0, gt[0][inst]))
        rng = np.random.default_rng(5)
        for frame_id in range(1, 6):
            before = set(obj.faces)
            result = find_object_sfm_sam(frame_id, obj, oracle, geometry, 1, True, rng, 0.5)
            assert result is not None
            assert np.array_equal(result.mask, gt[frame_id][inst])
            visible_now = faces_of_pixels(geometry.buffer(frame_id), gt[frame_id][inst])
            assert obj.faces == before | visible_now

    def test_k_best_prompt_with_features(self, scene_parts):
        _, _, gt, geometry, oracle = scene_parts
        inst = 2
        buf0 = geometry.buffer(0)
        field0 = oracle.encode_image(0)
        ys, xs = np.nonzero(gt[0][inst])
        obj = TrackedObject(
            id=0,
            feature=field0[ys[0], xs[0]].copy(),
            faces=faces_of_pixels(buf0, gt[0][inst]),
        )
        result = find_object_sfm_sam(3, obj, oracle, geometry, 2, False, None, 0.5)
        assert result is not None
        assert np.array_equal(result.mask, gt[3][inst])
        assert obj.last_prompt is not None and len(obj.last_prompt) == 2

    def test_wrong_face_removed_after_update(self, scene_parts):
        """A face visible outside the returned mask gets dropped."""
        _, _, gt, geometry, oracle = scene_parts
        frame = 2
        buf = geometry.buffer(frame)
        inst_faces = faces_of_pixels(buf, gt[frame][1])
        wrong = sorted(faces_of_pixels(buf, gt[frame][2]))[0]
        field = oracle.encode_image(frame)
        ys, xs = np.nonzero(gt[frame][1])
        obj = TrackedObject(
            id=0,
            feature=field[ys[0], xs[0]].copy(),
            faces=inst_faces | {wrong},
        )
        result = find_object_sfm_sam(frame, obj, oracle, geometry, 1, False, None, 0.3)
        assert result is not None
        assert np.array_equal(result.mask, gt[frame][1])
        assert wrong not in obj.faces
        assert inst_faces <= obj.faces

    def test_face_update_soundness(self, scene_parts):
        _, _, gt, geometry, oracle = scene_parts
        inst = 3
        buf0 = geometry.buffer(0)
        obj = TrackedObject(id=0, faces=faces_of_pixels(buf0, gt[0][inst]))
        rng = np.random.default_rng(1)
        for frame_id in range(1, 8):
            buf = geometry.buffer(frame_id)
            obj_pixels = pixels_of_faces(buf, obj.faces)
            result = find_object_sfm_sam(frame_id, obj, oracle, geometry, 1, True, rng, 0.5)
            if result is None:
                continue
            assert faces_of_pixels(buf, result.mask) <= obj.faces
            outside = faces_of_pixels(buf, obj_pixels & ~result.mask)
            assert not (outside & obj.faces)


# ---------------------------------------------------------------------------
# run_slp
# ---------------------------------------------------------------------------


class TestRunSlp:
    def test_empty_video(self):
        seg = StubSegmenter(_basis_field(8, 8, np.full((8, 8), 0.5)))
        result = run_slp(FakeDataset((), 8, 8), SlpConfig(variant="sam-only-1"), seg)
        assert result.objects == []
        assert result.counters["get_masks_calls"] == 0

    def test_missing_geometry_rejected(self):
        seg = StubSegmenter(_basis_field(8, 8, np.full((8, 8), 0.5)))
        with pytest.raises(ConfigurationError):
            run_slp(FakeDataset((0,), 8, 8), SlpConfig(variant="sfm-sam-1"), seg, geometry=None)

    @pytest.mark.parametrize("frame_skip,expected_calls,expected_frames", [
        (0, 10, list(range(10))),
        (1, 5, [1, 3, 5, 7, 9]),
        (4, 2, [4, 9]),
    ])
    def test_skip_counter(self, small_scene, frame_skip, expected_calls, expected_frames):
        layout = open_dataset(small_scene)
        recorder = Recorder(OracleSegmenter(load_labels(layout), seed=0, noise=0.05))
        config = SlpConfig(variant="sam-only-1", k=1, frame_skip=frame_skip, grid_side=8, seed=0)
        result = run_slp(layout, config, recorder)
        assert result.counters["get_masks_calls"] == expected_calls
        assert [f for f, _, _ in recorder.discoveries] == expected_frames

    def test_sfm_sam_2_tracks_scene_perfectly(self, small_scene):
        layout = open_dataset(small_scene)
        labels = load_labels(layout)
        oracle = OracleSegmenter(labels, seed=0, noise=0.05)
        geometry = load_geometry(layout)
        config = SlpConfig(variant="sfm-sam-2", k=1, frame_skip=0, grid_side=16, seed=0)
        result = run_slp(layout, config, oracle, geometry)
        gt = ground_truth_from_labels(labels)
        report = evaluate_run(gt, {f: result.masks_for_frame(f) for f in layout.frame_ids}, list(layout.frame_ids))
        assert report.mean_iou >= 0.99
        assert report.tracking_losses == 0

    def test_object_ids_stable_and_histories_ordered(self, small_scene):
        layout = open_dataset(small_scene)
        oracle = OracleSegmenter(load_labels(layout), seed=0, noise=0.05)
        geometry = load_geometry(layout)
        config = SlpConfig(variant="sfm-sam-2", frame_skip=1, grid_side=12, seed=3)
        result = run_slp(layout, config, oracle, geometry)
        assert [o.id for o in result.objects] == list(range(len(result.objects)))
        for obj in result.objects:
            frames = list(obj.history)
            assert frames == sorted(frames), "history frame ids must increase"

    def test_seen_mask_invariants(self, small_scene):
        """At each discovery, the seen mask covers everything appended this
        frame, and every proposal pokes outside the pre-closing seen mask."""
        layout = open_dataset(small_scene)
        recorder = Recorder(OracleSegmenter(load_labels(layout), seed=0, noise=0.05))
        geometry = load_geometry(layout)
        config = SlpConfig(variant="sfm-sam-2", frame_skip=0, grid_side=12, seed=0)
        result = run_slp(layout, config, recorder, geometry)

        first_frame = {o.id: min(o.history) for o in result.objects}
        for frame_id, seen, proposals in recorder.discoveries:
            appended = np.zeros_like(seen)
            for obj in result.objects:
                if first_frame[obj.id] < frame_id and frame_id in obj.history:
                    appended |= obj.history[frame_id]
            assert not (appended & ~seen).any(), f"frame {frame_id}: seen mask misses appended pixels"
            for prop in proposals:
                assert (prop.mask & ~appended).any(), "proposal adds nothing beyond tracked area"

    def test_seeded_determinism_bit_reproducible(self, small_scene):
        layout = open_dataset(small_scene)
        geometry = load_geometry(layout)

        def run_once():
            oracle = OracleSegmenter(load_labels(layout), seed=1, noise=0.05)
            config = SlpConfig(variant="sfm-sam-2", k=2, frame_skip=1, grid_side=12, seed=42)
            return run_slp(layout, config, oracle, geometry)

        a, b = run_once(), run_once()
        assert len(a.objects) == len(b.objects)
        for oa, ob in zip(a.objects, b.objects):
            assert oa.id == ob.id
            assert oa.faces == ob.faces
            assert set(oa.history) == set(ob.history)
            for f in oa.history:
                assert np.array_equal(oa.history[f], ob.history[f])
