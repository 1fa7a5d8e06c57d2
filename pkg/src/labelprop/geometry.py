"""Triangle meshes, pinhole cameras, and per-pixel visible-face queries.

Conventions used throughout:

* World frame is right-handed, units are arbitrary ("world units").
* Camera frame is x-right, y-down, z-forward; a pose maps world points to
  camera points via ``X_cam = R @ X_world + t``.
* Pixel ``(x, y)`` is column x of row y and its center sits at
  ``(x + 0.5, y + 0.5)``.
* A face buffer is an int32 array of shape ``(height, width)`` holding the
  index of the nearest front-most triangle visible at each pixel center, or
  ``ABSENT`` where no triangle projects.

Rasterization rules (all deterministic):

* A pixel belongs to a triangle iff its center is inside the projected
  triangle; centers exactly on an edge follow the top-left rule.
* Depth is the camera-space z of the surface point, interpolated
  perspective-correctly. Ties closer than ``DEPTH_TIE`` go to the lower
  face index.
* No back-face culling: reconstructed meshes have inconsistent winding.
* Triangles crossing the near plane are clipped against it and the visible
  pieces rasterized under the original face index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

ABSENT = -1

DEPTH_TIE = 1e-9
_MIN_FACE_AREA = 1e-12
_NEAR_Z = 1e-4
_ROTATION_TOL = 1e-6


@dataclass(frozen=True)
class CameraPose:
    """Pinhole intrinsics plus a world-to-camera rigid transform for one frame."""

    frame_id: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        err = np.abs(r @ r.T - np.eye(3)).max()
        if err > _ROTATION_TOL:
            raise ValueError(f"rotation is not orthonormal (max |R R^T - I| = {err:.2e})")
        det = np.linalg.det(r)
        if abs(det - 1.0) > _ROTATION_TOL:
            raise ValueError(f"rotation determinant must be +1, got {det:.9f}")

    def camera_center(self) -> np.ndarray:
        """Camera origin expressed in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class TriangleMesh:
    """Vertices (N, 3) float64 and faces (M, 3) int32 vertex-index triples."""

    vertices: np.ndarray
    faces: np.ndarray

    @property
    def face_count(self) -> int:
        return int(self.faces.shape[0])


def _face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    a = vertices[faces[:, 0]]
    e1 = vertices[faces[:, 1]] - a
    e2 = vertices[faces[:, 2]] - a
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def make_mesh(vertices, faces) -> TriangleMesh:
    """Build a validated mesh, dropping zero-area faces."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int32).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise ValueError("face index out of range")
    if f.size:
        f = f[_face_areas(v, f) > _MIN_FACE_AREA]
    return TriangleMesh(vertices=v, faces=f)


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


def _top_left(ax: float, ay: float, bx: float, by: float) -> bool:
    # Directed edge a->b of a triangle normalized to positive (screen-clockwise)
    # orientation: top edges point right, left edges point up.
    return (ay == by and bx > ax) or (by < ay)


def _clip_near(poly: list[np.ndarray]) -> list[np.ndarray]:
    """Clip a camera-space polygon against z = _NEAR_Z (Sutherland-Hodgman)."""
    out: list[np.ndarray] = []
    for i, a in enumerate(poly):
        b = poly[(i + 1) % len(poly)]
        a_in = a[2] > _NEAR_Z
        b_in = b[2] > _NEAR_Z
        if a_in:
            out.append(a)
        if a_in != b_in:
            t = (_NEAR_Z - a[2]) / (b[2] - a[2])
            out.append(a + t * (b - a))
    return out


def _draw_triangle(buf, depth, fi, pose, va, vb, vc) -> None:
    """Rasterize one camera-space triangle into the buffers."""
    height, width = buf.shape
    za, zb, zc = va[2], vb[2], vc[2]
    ax = pose.fx * va[0] / za + pose.cx
    ay = pose.fy * va[1] / za + pose.cy
    bx = pose.fx * vb[0] / zb + pose.cx
    by = pose.fy * vb[1] / zb + pose.cy
    cx = pose.fx * vc[0] / zc + pose.cx
    cy = pose.fy * vc[1] / zc + pose.cy

    area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if area == 0.0:
        return
    if area < 0.0:
        bx, by, cx, cy = cx, cy, bx, by
        zb, zc = zc, zb
        area = -area

    x0 = max(0, int(math.floor(min(ax, bx, cx))) - 1)
    x1 = min(width - 1, int(math.ceil(max(ax, bx, cx))) + 1)
    y0 = max(0, int(math.floor(min(ay, by, cy))) - 1)
    y1 = min(height - 1, int(math.ceil(max(ay, by, cy))) + 1)
    if x1 < x0 or y1 < y0:
        return

    pcx = np.arange(x0, x1 + 1, dtype=np.float64) + 0.5
    pcy = np.arange(y0, y1 + 1, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(pcx, pcy)

    w0 = (cx - bx) * (gy - by) - (cy - by) * (gx - bx)
    w1 = (ax - cx) * (gy - cy) - (ay - cy) * (gx - cx)
    w2 = (bx - ax) * (gy - ay) - (by - ay) * (gx - ax)

    inside = (
        ((w0 > 0) | ((w0 == 0) & _top_left(bx, by, cx, cy)))
        & ((w1 > 0) | ((w1 == 0) & _top_left(cx, cy, ax, ay)))
        & ((w2 > 0) | ((w2 == 0) & _top_left(ax, ay, bx, by)))
    )
    if not inside.any():
        return

    inv_z = (w0 / area) / za + (w1 / area) / zb + (w2 / area) / zc
    with np.errstate(divide="ignore"):
        pz = 1.0 / inv_z

    sub_depth = depth[y0 : y1 + 1, x0 : x1 + 1]
    sub_buf = buf[y0 : y1 + 1, x0 : x1 + 1]
    # Faces are visited in ascending index order, so keeping the current
    # entry on a near-tie implements the lower-index tie rule.
    write = inside & (pz < sub_depth - DEPTH_TIE)
    sub_depth[write] = pz[write]
    sub_buf[write] = fi


def rasterize(mesh: TriangleMesh, pose: CameraPose, width: int, height: int) -> np.ndarray:
    """Render the per-pixel visible-face buffer for one camera pose.

    Args:
        mesh: scene mesh.
        pose: camera pose for the frame (``pose.validate()`` must hold).
        width, height: frame dimensions in pixels, both > 0.

    Returns:
        int32 array (height, width); entry is the nearest face index covering
        the pixel center, or ``ABSENT``.
    """
    if width <= 0 or height <= 0:
        raise ValueError("frame dimensions must be positive")
    buf = np.full((height, width), ABSENT, dtype=np.int32)
    if mesh.face_count == 0:
        return buf
    depth = np.full((height, width), np.inf, dtype=np.float64)

    cam = mesh.vertices @ pose.rotation.T + pose.translation
    z = cam[:, 2]

    for fi in range(mesh.face_count):
        ia, ib, ic = mesh.faces[fi]
        behind = (z[ia] <= _NEAR_Z) + (z[ib] <= _NEAR_Z) + (z[ic] <= _NEAR_Z)
        if behind == 0:
            _draw_triangle(buf, depth, fi, pose, cam[ia], cam[ib], cam[ic])
        elif behind < 3:
            poly = _clip_near([cam[ia], cam[ib], cam[ic]])
            for j in range(1, len(poly) - 1):
                _draw_triangle(buf, depth, fi, pose, poly[0], poly[j], poly[j + 1])

    return buf


# ---------------------------------------------------------------------------
# Face <-> pixel queries
# ---------------------------------------------------------------------------


def pixels_of_faces(buffer: np.ndarray, faces: set[int]) -> np.ndarray:
    """Boolean mask of pixels whose buffer entry is present and in ``faces``."""
    if not faces:
        return np.zeros(buffer.shape, dtype=bool)
    wanted = np.fromiter(faces, dtype=np.int64)
    return np.isin(buffer, wanted)


def faces_of_pixels(buffer: np.ndarray, mask: np.ndarray) -> set[int]:
    """Distinct present face indices under the set pixels of ``mask``."""
    if mask.shape != buffer.shape:
        raise ValueError(f"mask shape {mask.shape} != buffer shape {buffer.shape}")
    vals = np.unique(buffer[mask])
    return {int(v) for v in vals if v != ABSENT}


class Geometry:
    """Scene mesh plus per-frame poses, with cached face buffers."""

    def __init__(self, mesh: TriangleMesh, poses: dict[int, CameraPose], width: int, height: int):
        self.mesh = mesh
        self.poses = poses
        self.width = width
        self.height = height
        self._buffers: dict[int, np.ndarray] = {}

    def buffer(self, frame_id: int) -> np.ndarray:
        if frame_id not in self.poses:
            raise ConfigurationError(f"no camera pose (and thus no face buffer) for frame {frame_id}")
        if frame_id not in self._buffers:
            self._buffers[frame_id] = rasterize(self.mesh, self.poses[frame_id], self.width, self.height)
        return self._buffers[frame_id]

    def precompute(self) -> None:
        for frame_id in self.poses:
            self.buffer(frame_id)


# ---------------------------------------------------------------------------
# Mesh and pose file I/O
# ---------------------------------------------------------------------------


def load_obj(path) -> TriangleMesh:
    """Load a Wavefront OBJ subset: ``v`` and ``f`` records, 1-based indices.

    Faces with more than 3 vertices are fan-triangulated. Zero-area faces are
    dropped after load.
    """
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise ValueError(f"{path}:{line_no}: vertex needs 3 coordinates")
            vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
            if len(idx) < 3:
                raise ValueError(f"{path}:{line_no}: face needs at least 3 vertices")
            for second, third in zip(idx[1:-1], idx[2:]):
                faces.append([idx[0], second, third])
    return make_mesh(np.array(vertices, dtype=np.float64).reshape(-1, 3), faces)


def save_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {vx:.9g} {vy:.9g} {vz:.9g}" for vx, vy, vz in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def load_poses(path) -> dict[int, CameraPose]:
    """Load poses, one per line: ``frame_id fx fy cx cy r11..r33 tx ty tz``."""
    poses: dict[int, CameraPose] = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 17:
            raise ValueError(f"{path}:{line_no}: expected 17 fields, got {len(parts)}")
        frame_id = int(parts[0])
        vals = [float(tok) for tok in parts[1:]]
        pose = CameraPose(
            frame_id=frame_id,
            fx=vals[0],
            fy=vals[1],
            cx=vals[2],
            cy=vals[3],
            rotation=np.array(vals[4:13], dtype=np.float64).reshape(3, 3),
            translation=np.array(vals[13:16], dtype=np.float64),
        )
        pose.validate()
        poses[frame_id] = pose
    return poses


def save_poses(poses: dict[int, CameraPose], path) -> None:
    lines = []
    for frame_id in sorted(poses):
        p = poses[frame_id]
        nums = [p.fx, p.fy, p.cx, p.cy, *p.rotation.ravel(), *p.translation]
        lines.append(str(frame_id) + " " + " ".join(f"{x:.17g}" for x in nums))
    Path(path).write_text("\n".join(lines) + "\n")
