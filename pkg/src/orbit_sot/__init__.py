"""Model-agnostic single-object tracking for small objects in satellite video.

The engine follows a keyframe pipeline: a promptable segmenter initialises a
point set on the target, a point tracker propagates the points between
keyframes, and at every keyframe the point set is renewed by segmentation
consensus.  Segmenter and point tracker are pluggable backends — a
deterministic synthetic-scene oracle for verification, or an external model
bridge speaking a length-prefixed wire protocol.
"""
from .types import (
    BoundingBox,
    CropTransform,
    Frame,
    Heatmap,
    Mask,
    PipelineConfig,
    PointSet,
    VideoSequence,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "CropTransform",
    "Frame",
    "Heatmap",
    "Mask",
    "PipelineConfig",
    "PointSet",
    "VideoSequence",
    "__version__",
]
