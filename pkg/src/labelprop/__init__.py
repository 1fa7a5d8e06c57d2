"""Video instance tracking by propagating masks across frames, via per-pixel
embedding matching and/or mesh-face reprojection, plus the evaluation
harness that scores runs against ground-truth labels."""

from .geometry import (
    ABSENT,
    CameraPose,
    Geometry,
    TriangleMesh,
    faces_of_pixels,
    load_obj,
    load_poses,
    make_mesh,
    pixels_of_faces,
    rasterize,
)
from .masks import PromptGrid, closing, filter_prompts, iou, make_grid
from .propagation import (
    SlpConfig,
    SlpResult,
    TrackedObject,
    find_object_sam_only,
    find_object_sfm_sam,
    hill_climb,
    run_slp,
)
from .segmenter import (
    OracleSegmenter,
    SegmentProposal,
    Segmenter,
    StreamSegmenter,
    read_embedding,
    rle_decode,
    write_embedding,
)
from .synthetic import SceneSpec, generate

__all__ = [
    "ABSENT",
    "CameraPose",
    "Geometry",
    "OracleSegmenter",
    "PromptGrid",
    "SceneSpec",
    "SegmentProposal",
    "Segmenter",
    "SlpConfig",
    "SlpResult",
    "StreamSegmenter",
    "TrackedObject",
    "TriangleMesh",
    "closing",
    "faces_of_pixels",
    "filter_prompts",
    "find_object_sam_only",
    "find_object_sfm_sam",
    "generate",
    "hill_climb",
    "iou",
    "load_obj",
    "load_poses",
    "make_grid",
    "make_mesh",
    "pixels_of_faces",
    "rasterize",
    "read_embedding",
    "rle_decode",
    "run_slp",
    "write_embedding",
]
