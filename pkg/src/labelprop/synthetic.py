"""Desk-scale test-world generator.

A scene is a large ground quad (instance 0) with axis-aligned cuboids
(instances 1..N) scattered on it, viewed by a camera orbiting the scene
center. ``generate`` writes a full dataset directory:

* ``mesh.obj``            scene mesh (ground first, then cuboids)
* ``poses.txt``           one camera pose per frame
* ``labels/%06d.png``     16-bit instance labels, pixel = instance id + 1, 0 = none
* ``frames/%06d.png``     flat-shaded RGB renders
* ``face_instances.txt``  owning instance id per mesh face

Labels are produced by rasterizing the mesh and mapping faces to instances,
so they agree with the geometry module by construction. Placement is
rejection-sampled until every cuboid is fully visible (unoccluded, unclipped)
in at least one frame and always projects at least ``MIN_EXTENT_PX`` wide
while visible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (
    ABSENT,
    CameraPose,
    TriangleMesh,
    make_mesh,
    rasterize,
    save_obj,
    save_poses,
)

MIN_EXTENT_PX = 4

_PLACE_SALT = 0xA110C
_COLOR_SALT = 0xC0105
_MAX_ATTEMPTS = 25

_LIGHT = np.array([0.4, 0.3, 0.85])
_LIGHT = _LIGHT / np.linalg.norm(_LIGHT)


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a generated scene."""

    seed: int = 0
    object_count: int = 3
    frame_count: int = 24
    width: int = 128
    height: int = 128
    orbit_radius: float = 4.5
    orbit_height: float = 3.2
    fov_deg: float = 45.0
    spread: float = 0.9  # placement disk radius for cuboid centers

    def validate(self) -> None:
        if self.object_count < 1:
            raise ValueError("object_count must be >= 1")
        if self.frame_count < 2:
            raise ValueError("frame_count must be >= 2")
        if self.width < 8 or self.height < 8:
            raise ValueError("frame dimensions must be at least 8 px")


@dataclass
class _Cuboid:
    cx: float
    cy: float
    hx: float
    hy: float
    hz: float
    verts: np.ndarray = field(init=False)

    def __post_init__(self):
        xs = (self.cx - self.hx, self.cx + self.hx)
        ys = (self.cy - self.hy, self.cy + self.hy)
        zs = (0.0, self.hz)
        self.verts = np.array([(x, y, z) for z in zs for y in ys for x in xs], dtype=np.float64)


# vertex order above: index bit 0 = +x, bit 1 = +y, bit 2 = +z
_CUBOID_FACES = np.array(
    [
        (0, 2, 1), (1, 2, 3),  # bottom
        (4, 5, 6), (5, 7, 6),  # top
        (0, 1, 4), (1, 5, 4),  # y-
        (2, 6, 3), (3, 6, 7),  # y+
        (0, 4, 2), (2, 4, 6),  # x-
        (1, 3, 5), (3, 7, 5),  # x+
    ],
    dtype=np.int32,
)


def _orbit_pose(spec: SceneSpec, frame_id: int) -> CameraPose:
    theta = 2.0 * math.pi * frame_id / spec.frame_count
    center = np.array(
        [spec.orbit_radius * math.cos(theta), spec.orbit_radius * math.sin(theta), spec.orbit_height]
    )
    forward = -center / np.linalg.norm(center)  # look at the scene origin
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    fx = (spec.width / 2.0) / math.tan(math.radians(spec.fov_deg) / 2.0)
    return CameraPose(
        frame_id=frame_id,
        fx=fx,
        fy=fx,
        cx=spec.width / 2.0,
        cy=spec.height / 2.0,
        rotation=rotation,
        translation=-rotation @ center,
    )


def _ground_half_side(spec: SceneSpec, pose: CameraPose) -> float:
    # The quad must cover the frustum-ground intersection at every frame:
    # size it from the angle between the lowest view tilt and the diagonal fov.
    tilt = math.atan2(spec.orbit_height, spec.orbit_radius)
    tan_h = (spec.width / 2.0) / pose.fx
    tan_v = (spec.height / 2.0) / pose.fy
    diag = math.atan(math.hypot(tan_h, tan_v))
    margin = max(tilt - diag, math.radians(2.0))
    return 1.2 * (spec.orbit_radius + min(spec.orbit_height / math.tan(margin), 500.0))


def _sample_cuboids(spec: SceneSpec, attempt: int) -> list[_Cuboid]:
    rng = np.random.default_rng([spec.seed, _PLACE_SALT, attempt])
    cuboids: list[_Cuboid] = []
    for _ in range(spec.object_count):
        for _ in range(500):
            r = spec.spread * math.sqrt(rng.uniform())
            phi = rng.uniform(0.0, 2.0 * math.pi)
            cx, cy = r * math.cos(phi), r * math.sin(phi)
            hx, hy = rng.uniform(0.16, 0.30, size=2)
            hz = rng.uniform(0.3, 0.8)
            clear = all(
                abs(cx - o.cx) > hx + o.hx + 0.3 or abs(cy - o.cy) > hy + o.hy + 0.3 for o in cuboids
            )
            if clear:
                cuboids.append(_Cuboid(cx, cy, hx, hy, hz))
                break
        else:
            break
    return cuboids


def _assemble(spec: SceneSpec, cuboids: list[_Cuboid], half_side: float):
    """Scene mesh plus the face -> instance id map (ground is instance 0)."""
    s = half_side
    vertices = [(-s, -s, 0.0), (s, -s, 0.0), (s, s, 0.0), (-s, s, 0.0)]
    faces = [(0, 1, 2), (0, 2, 3)]
    face_instance = [0, 0]
    for i, cub in enumerate(cuboids, start=1):
        base = len(vertices)
        vertices.extend(cub.verts.tolist())
        faces.extend((_CUBOID_FACES + base).tolist())
        face_instance.extend([i] * len(_CUBOID_FACES))
    return make_mesh(vertices, faces), np.array(face_instance, dtype=np.int32)


def _project_points(pose: CameraPose, pts: np.ndarray) -> np.ndarray:
    cam = pts @ pose.rotation.T + pose.translation
    return np.column_stack(
        [pose.fx * cam[:, 0] / cam[:, 2] + pose.cx, pose.fy * cam[:, 1] / cam[:, 2] + pose.cy]
    )


def _check_layout(
    spec: SceneSpec,
    cuboids: list[_Cuboid],
    poses: dict[int, CameraPose],
    labels: dict[int, np.ndarray],
) -> bool:
    for i, cub in enumerate(cuboids, start=1):
        solo = make_mesh(cub.verts, _CUBOID_FACES)
        fully_visible = False
        for frame_id, pose in poses.items():
            scene_mask = labels[frame_id] == i + 1
            visible = int(np.count_nonzero(scene_mask))
            corners = _project_points(pose, cub.verts)
            if visible:
                bbox = corners.max(axis=0) - corners.min(axis=0)
                if bbox.min() < MIN_EXTENT_PX:
                    return False
            if fully_visible or not visible:
                continue
            in_frame = (
                (corners[:, 0] >= 0).all()
                and (corners[:, 0] < spec.width).all()
                and (corners[:, 1] >= 0).all()
                and (corners[:, 1] < spec.height).all()
            )
            if not in_frame:
                continue
            solo_buf = rasterize(solo, pose, spec.width, spec.height)
            if np.array_equal(solo_buf != ABSENT, scene_mask):
                fully_visible = True
        if not fully_visible:
            return False
    return True


def render_labels(buf: np.ndarray, face_instance: np.ndarray) -> np.ndarray:
    """Instance-label image from a face buffer: instance id + 1, 0 where absent."""
    out = np.zeros(buf.shape, dtype=np.uint16)
    covered = buf != ABSENT
    out[covered] = face_instance[buf[covered]] + 1
    return out


def _render_frame(
    buf: np.ndarray, labels: np.ndarray, mesh: TriangleMesh, palette: np.ndarray
) -> np.ndarray:
    a = mesh.vertices[mesh.faces[:, 0]]
    n = np.cross(mesh.vertices[mesh.faces[:, 1]] - a, mesh.vertices[mesh.faces[:, 2]] - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    shade_face = 0.35 + 0.65 * np.abs(n @ _LIGHT)
    shade = np.ones(buf.shape)
    covered = buf != ABSENT
    shade[covered] = shade_face[buf[covered]]
    return (palette[labels] * shade[..., None]).astype(np.uint8)


def generate(spec: SceneSpec, out_dir) -> Path:
    """Write a synthetic dataset; byte-for-byte deterministic per spec."""
    spec.validate()
    root = Path(out_dir)
    poses = {i: _orbit_pose(spec, i) for i in range(spec.frame_count)}
    half_side = _ground_half_side(spec, poses[0])

    for attempt in range(_MAX_ATTEMPTS):
        cuboids = _sample_cuboids(spec, attempt)
        if len(cuboids) < spec.object_count:
            continue
        mesh, face_instance = _assemble(spec, cuboids, half_side)
        labels = {
            f: render_labels(rasterize(mesh, poses[f], spec.width, spec.height), face_instance)
            for f in poses
        }
        if _check_layout(spec, cuboids, poses, labels):
            break
    else:
        raise RuntimeError(f"could not place {spec.object_count} mutually visible objects (seed {spec.seed})")

    (root / "labels").mkdir(parents=True, exist_ok=True)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    save_obj(mesh, root / "mesh.obj")
    save_poses(poses, root / "poses.txt")
    (root / "face_instances.txt").write_text("\n".join(str(i) for i in face_instance) + "\n")

    color_rng = np.random.default_rng([spec.seed, _COLOR_SALT])
    palette = color_rng.integers(50, 230, size=(spec.object_count + 2, 3)).astype(np.float64)
    palette[0] = (30.0, 30.0, 36.0)  # background

    for frame_id in sorted(poses):
        buf = rasterize(mesh, poses[frame_id], spec.width, spec.height)
        lab = labels[frame_id]
        Image.fromarray(lab).save(root / "labels" / f"{frame_id:06d}.png")
        Image.fromarray(_render_frame(buf, lab, mesh, palette)).save(
            root / "frames" / f"{frame_id:06d}.png"
        )
    return root
