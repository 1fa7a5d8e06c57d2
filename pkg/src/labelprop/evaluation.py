"""Ground-truth comparison: best-IoU matching, tracking-loss counting,
spot-check accounting, and CSV report emission.

Ground truth is a per-frame map ``{label_id: mask}`` containing only the
labels present (nonempty) in that frame.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .masks import iou

METRICS_COLUMNS = ["variant", "time_min", "mean_iou", "tracking_losses", "k", "F"]
SUMMARY_COLUMNS = ["n_frames", "t_sfm_min", "n_faces", "t_pxl_min", "fn_v", "fn_a", "mean_iou"]


def best_iou_match(
    gt_masks: dict[int, np.ndarray], tracked: dict[int, np.ndarray]
) -> dict[int, tuple[int, float]]:
    """Independently per label, the tracked object with maximal IoU.

    Ties go to the lowest object id; an object may serve several labels.
    Labels whose IoU is zero against every object are left unmatched.
    """
    matches: dict[int, tuple[int, float]] = {}
    for label_id, gt_mask in gt_masks.items():
        best_obj, best_score = None, 0.0
        for obj_id in sorted(tracked):
            score = iou(gt_mask, tracked[obj_id])
            if score > best_score:
                best_obj, best_score = obj_id, score
        if best_obj is not None:
            matches[label_id] = (best_obj, best_score)
    return matches


def count_tracking_losses(match_sequence: list[dict[int, int]]) -> int:
    """Count label-to-object switches between consecutive frames.

    ``match_sequence`` holds one ``{label_id: object_id}`` map per frame, in
    frame order. A pair of consecutive frames contributes one loss for a
    label matched in both with differing object ids; frames where the label
    is unmatched contribute nothing and reset the comparison.
    """
    labels = {lab for frame in match_sequence for lab in frame}
    losses = 0
    for label in labels:
        for prev, cur in zip(match_sequence, match_sequence[1:]):
            if label in prev and label in cur and prev[label] != cur[label]:
                losses += 1
    return losses


@dataclass
class MatchReport:
    """Per-frame matches plus the aggregate scores of a run."""

    per_frame: list[dict[int, tuple[int, float]]]
    mean_iou: float
    tracking_losses: int


def evaluate_run(
    ground_truth: dict[int, dict[int, np.ndarray]],
    tracked_by_frame: dict[int, dict[int, np.ndarray]],
    frame_ids: list[int],
) -> MatchReport:
    """Match every frame, average best-IoU over all present labels (a label
    missed entirely scores 0), and count tracking losses."""
    per_frame: list[dict[int, tuple[int, float]]] = []
    scores: list[float] = []
    for frame_id in frame_ids:
        gt = ground_truth.get(frame_id, {})
        matches = best_iou_match(gt, tracked_by_frame.get(frame_id, {}))
        per_frame.append(matches)
        for label_id in gt:
            scores.append(matches[label_id][1] if label_id in matches else 0.0)
    losses = count_tracking_losses([{lab: m[0] for lab, m in frame.items()} for frame in per_frame])
    return MatchReport(
        per_frame=per_frame,
        mean_iou=float(np.mean(scores)) if scores else 0.0,
        tracking_losses=losses,
    )


def spot_check(
    author: dict[int, dict[int, np.ndarray]],
    volunteer: dict[int, dict[int, np.ndarray]],
    frames: list[int],
) -> tuple[int, int, float]:
    """Compare two labelings of sampled frames.

    Each author mask takes its best-IoU volunteer mask; the mean of those
    best scores is returned together with the false-negative tallies: a
    per-frame surplus of volunteer masks counts against the author (fn_a)
    and the reverse surplus against the volunteer (fn_v).
    """
    fn_a = 0
    fn_v = 0
    scores: list[float] = []
    for frame_id in frames:
        a_masks = author.get(frame_id, {})
        v_masks = volunteer.get(frame_id, {})
        for mask in a_masks.values():
            best = max((iou(mask, v) for v in v_masks.values()), default=0.0)
            scores.append(best)
        fn_a += max(0, len(v_masks) - len(a_masks))
        fn_v += max(0, len(a_masks) - len(v_masks))
    return fn_a, fn_v, float(np.mean(scores)) if scores else 0.0


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def write_metrics_csv(path, rows: list[dict]) -> None:
    """Per-run metrics in the shape variant/time/IoU/losses/k/F."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def write_summary_csv(path, row: dict) -> None:
    """Per-video summary: frame count, geometry setup times, face count,
    and the spot-check tallies."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerow(row)
