"""The promptable-segmenter port: image encoding, prompt-to-mask queries,
grid-based discovery of new objects.

Two implementations are provided. ``OracleSegmenter`` answers from
ground-truth instance labels and synthesizes a per-pixel embedding field for
them, which makes end-to-end runs exact and lets tests inject controlled
noise. ``StreamSegmenter`` drives an external mask server over
newline-delimited JSON on stdio and reads embedding files it exports.

A feature field is a float32 array (height, width, dim) of unit L2-norm
vectors. Prompts are (N, 2) int arrays of (x, y) pixel coordinates.
"""

from __future__ import annotations

import json
import struct
import subprocess
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FrameNotFoundError, ProtocolError
from .masks import PromptGrid, filter_prompts, iou

SLPE_MAGIC = b"SLPE"
SLPE_VERSION = 1

DEDUP_IOU = 0.9

_VEC_SALT = 0x5EED
_NOISE_SALT = 0x0153
_FIELD_CACHE_FRAMES = 4


def normalize_rows(vectors: np.ndarray) -> np.ndarray:
    """L2-normalize along the last axis (float32); zero vectors stay zero."""
    v = vectors.astype(np.float32, copy=True)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    np.divide(v, norms, out=v, where=norms > 0)
    return v


@dataclass(frozen=True)
class SegmentProposal:
    """A candidate new object: its mask, the prompt that elicited it, and the
    embedding vector at the prompt site."""

    mask: np.ndarray
    prompt: np.ndarray
    feature: np.ndarray


class Segmenter(ABC):
    """Prompt-driven segmentation over a bound frame set."""

    @abstractmethod
    def encode_image(self, frame_id: int) -> np.ndarray:
        """Per-pixel unit-norm feature field for the frame, (H, W, dim)."""

    @abstractmethod
    def get_mask(self, frame_id: int, points: np.ndarray) -> np.ndarray:
        """Binary mask of the segment selected by the prompt points."""

    def get_masks(self, frame_id: int, seen: np.ndarray, grid: PromptGrid) -> list[SegmentProposal]:
        """Discover segments not yet covered by ``seen``.

        Prompts under the seen mask are dropped, each survivor is queried,
        masks fully inside ``seen`` are discarded, and near-duplicates
        (IoU > ``DEDUP_IOU``) are deduplicated greedily by descending area.
        """
        retained = filter_prompts(grid, seen)
        field: np.ndarray | None = None
        raw: list[SegmentProposal] = []
        for x, y in retained.points:
            if any(p.mask[y, x] for p in raw):
                continue  # already explained by a proposal from this call
            mask = self.get_mask(frame_id, np.array([[x, y]], dtype=np.int32))
            if not mask.any():
                continue
            if not np.any(mask & ~seen):
                continue
            if field is None:
                field = self.encode_image(frame_id)
            prompt = np.array([[x, y]], dtype=np.int32)
            raw.append(SegmentProposal(mask=mask, prompt=prompt, feature=field[y, x].copy()))
        return _dedup(raw)


def _dedup(proposals: list[SegmentProposal]) -> list[SegmentProposal]:
    areas = [int(np.count_nonzero(p.mask)) for p in proposals]
    order = sorted(range(len(proposals)), key=lambda i: -areas[i])
    kept: list[int] = []
    for i in order:
        if all(iou(proposals[i].mask, proposals[j].mask) <= DEDUP_IOU for j in kept):
            kept.append(i)
    return [proposals[i] for i in kept]


# ---------------------------------------------------------------------------
# Ground-truth-backed oracle
# ---------------------------------------------------------------------------


class OracleSegmenter(Segmenter):
    """Answers segmentation queries from instance-label images.

    Every distinct label value (background 0 included) is a segment. Each
    segment gets a random unit feature vector, drawn so that all pairs stay
    well separated in cosine similarity; a pixel's embedding is its segment's
    vector plus seeded per-frame Gaussian noise, renormalized. Raising
    ``noise`` degrades visual matching without touching the masks, which is
    the failure-injection knob used by the stress tests.
    """

    def __init__(self, labels: dict[int, np.ndarray], dim: int = 32, seed: int = 0, noise: float = 0.05):
        if not labels:
            raise ValueError("oracle needs at least one labeled frame")
        shapes = {lab.shape for lab in labels.values()}
        if len(shapes) != 1:
            raise ValueError(f"label frames disagree on shape: {shapes}")
        self._labels = {f: np.asarray(lab) for f, lab in labels.items()}
        self.height, self.width = next(iter(shapes))
        self.dim = dim
        self.seed = seed
        self.noise = noise
        values = np.unique(np.concatenate([lab.ravel() for lab in self._labels.values()]))
        self._lut = self._segment_vectors(values)
        self._field_cache: dict[int, np.ndarray] = {}

    def _segment_vectors(self, values: np.ndarray) -> np.ndarray:
        """One unit vector per label value, pairwise |cos| <= 0.35."""
        rng = np.random.default_rng([self.seed, _VEC_SALT])
        lut = np.zeros((int(values.max()) + 1, self.dim), dtype=np.float32)
        chosen: list[np.ndarray] = []
        for value in values:
            while True:
                v = rng.standard_normal(self.dim)
                v /= np.linalg.norm(v)
                if all(abs(float(v @ u)) <= 0.35 for u in chosen):
                    break
            chosen.append(v)
            lut[int(value)] = v.astype(np.float32)
        return lut

    def _label_image(self, frame_id: int) -> np.ndarray:
        try:
            return self._labels[frame_id]
        except KeyError:
            raise FrameNotFoundError(f"frame {frame_id} is not in the bound dataset") from None

    def encode_image(self, frame_id: int) -> np.ndarray:
        if frame_id in self._field_cache:
            return self._field_cache[frame_id]
        labels = self._label_image(frame_id)
        field = self._lut[labels]
        if self.noise > 0:
            rng = np.random.default_rng([self.seed, _NOISE_SALT, frame_id])
            field = field + self.noise * rng.standard_normal(field.shape, dtype=np.float32)
        field = normalize_rows(field)
        if len(self._field_cache) >= _FIELD_CACHE_FRAMES:
            self._field_cache.pop(next(iter(self._field_cache)))
        self._field_cache[frame_id] = field
        return field

    def get_mask(self, frame_id: int, points: np.ndarray) -> np.ndarray:
        labels = self._label_image(frame_id)
        pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
        if pts.shape[0] < 1:
            raise ValueError("prompt needs at least one point")
        if (pts[:, 0] < 0).any() or (pts[:, 0] >= self.width).any() or (pts[:, 1] < 0).any() or (pts[:, 1] >= self.height).any():
            raise ValueError("prompt point outside the frame")
        values = labels[pts[:, 1], pts[:, 0]]
        uniq, counts = np.unique(values, return_counts=True)
        winner = uniq[np.argmax(counts)]  # np.unique sorts, so ties pick the lowest value
        return labels == winner


# ---------------------------------------------------------------------------
# Embedding file format
# ---------------------------------------------------------------------------


def write_embedding(path, field: np.ndarray) -> None:
    """Write a feature field: magic, u32 version/width/height/dim, then
    float32 little-endian data, row-major, vector-contiguous."""
    h, w, d = field.shape
    header = SLPE_MAGIC + struct.pack("<IIII", SLPE_VERSION, w, h, d)
    Path(path).write_bytes(header + field.astype("<f4").tobytes())


def read_embedding(path, renormalize: bool = True) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != SLPE_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    version, w, h, d = struct.unpack_from("<IIII", data, 4)
    if version != SLPE_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = 20 + 4 * w * h * d
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    field = np.frombuffer(data, dtype="<f4", offset=20).reshape(h, w, d)
    return normalize_rows(field) if renormalize else field.copy()


# ---------------------------------------------------------------------------
# Wire protocol helpers and the stream-backed adapter client
# ---------------------------------------------------------------------------


def rle_decode(runs, height: int, width: int) -> np.ndarray:
    """Decode alternating 0s/1s run lengths (starting with 0s), row-major."""
    runs = np.asarray(runs, dtype=np.int64)
    if runs.ndim != 1 or (runs < 0).any():
        raise ProtocolError("run lengths must be a flat list of non-negative ints")
    if runs.sum() != height * width:
        raise ProtocolError(f"run lengths sum to {runs.sum()}, expected {height * width}")
    values = np.zeros(len(runs), dtype=bool)
    values[1::2] = True
    return np.repeat(values, runs).reshape(height, width)


class StreamSegmenter(Segmenter):
    """Client for an external mask server speaking JSON lines over stdio.

    The engine owns the server process: one request at a time is written to
    its stdin and the matching response is read back. Embeddings arrive as
    paths to exported files and are renormalized on read.
    """

    def __init__(self, command: list[str], cwd=None):
        self._proc = subprocess.Popen(
            command,
            cwd=cwd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lock = threading.Lock()
        self._next_id = 0
        self._field_cache: dict[int, np.ndarray] = {}

    def _request(self, payload: dict) -> dict:
        with self._lock:
            if self._proc.poll() is not None:
                raise ProtocolError("mask server exited")
            self._next_id += 1
            payload = {"id": self._next_id, **payload}
            assert self._proc.stdin is not None and self._proc.stdout is not None
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
            if not line:
                raise ProtocolError("mask server closed its output")
            try:
                response = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"unparseable response: {line!r}") from exc
            if response.get("id") != payload["id"]:
                raise ProtocolError(f"response id {response.get('id')} != request id {payload['id']}")
            if "error" in response:
                raise ProtocolError(f"server error: {response['error']}")
            return response

    def encode_image(self, frame_id: int) -> np.ndarray:
        if frame_id in self._field_cache:
            return self._field_cache[frame_id]
        response = self._request({"op": "encode", "frame": int(frame_id)})
        field = read_embedding(response["path"], renormalize=True)
        if len(self._field_cache) >= _FIELD_CACHE_FRAMES:
            self._field_cache.pop(next(iter(self._field_cache)))
        self._field_cache[frame_id] = field
        return field

    def get_mask(self, frame_id: int, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
        response = self._request(
            {"op": "mask", "frame": int(frame_id), "points": [[int(x), int(y)] for x, y in pts]}
        )
        return rle_decode(response["rle"], int(response["h"]), int(response["w"]))

    def close(self) -> None:
        if self._proc.poll() is None:
            if self._proc.stdin is not None:
                self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "StreamSegmenter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
