"""Domain types: frames, boxes, masks, heatmaps, point sets and configuration.

Coordinate conventions used throughout:

* Rasters are row-major numpy arrays indexed ``[row, col]`` = ``[y, x]``.
* Point coordinates are continuous ``(x, y)`` pairs; the centre of raster
  pixel ``(row=i, col=j)`` is the point ``(j + 0.5, i + 0.5)``.
* A pixel belongs to a real-valued box iff its centre lies inside the
  half-open box ``[x, x+w) x [y, y+h)``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with real-valued top-left corner and extent."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"degenerate box: w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def scaled_about_center(self, factor: float) -> "BoundingBox":
        cx, cy = self.center
        return BoundingBox(cx - self.w * factor / 2.0, cy - self.h * factor / 2.0,
                           self.w * factor, self.h * factor)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass
class Mask:
    """Binary raster; ``bits`` is a 2-D boolean array."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValueError(f"mask must be a non-empty 2-D raster, got shape {bits.shape}")
        if bits.dtype != np.bool_:
            bits = bits.astype(bool)
        self.bits = bits

    @classmethod
    def zeros(cls, width: int, height: int) -> "Mask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    @property
    def is_empty(self) -> bool:
        return not self.bits.any()


@dataclass
class Heatmap:
    """Per-pixel non-negative counts of mask overlap."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError(f"heatmap must be 2-D, got shape {counts.shape}")
        if np.issubdtype(counts.dtype, np.floating):
            raise ValueError("heatmap counts must be integer")
        if (counts < 0).any():
            raise ValueError("heatmap counts must be non-negative")
        self.counts = counts.astype(np.int32, copy=False)

    @property
    def width(self) -> int:
        return self.counts.shape[1]

    @property
    def height(self) -> int:
        return self.counts.shape[0]


@dataclass
class PointSet:
    """Sub-pixel (x, y) coordinates tied to one frame."""

    points: np.ndarray
    frame_index: int = 0

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 2)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must have shape (N, 2), got {pts.shape}")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def is_empty(self) -> bool:
        return len(self) == 0


@dataclass(frozen=True)
class CropTransform:
    """Affine map between a crop/resample sub-frame and original coordinates.

    ``source_box`` is the crop window in original coordinates (integer-aligned
    by construction) and ``scale`` the resampling factor.  A point ``p`` in
    original coordinates maps to ``(p - origin) * scale`` in the sub-frame.
    """

    source_box: BoundingBox
    scale: float

    def __post_init__(self) -> None:
        if not self.scale >= 1.0:
            raise ValueError(f"resampling factor must be >= 1, got {self.scale}")

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0

    @property
    def origin(self) -> tuple[float, float]:
        return (self.source_box.x, self.source_box.y)

    @property
    def output_size(self) -> tuple[int, int]:
        """(width, height) of the resampled sub-frame."""
        w = max(1, int(round(self.source_box.w * self.scale)))
        h = max(1, int(round(self.source_box.h * self.scale)))
        return (w, h)

    def to_crop(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - np.array(self.origin)) * self.scale

    def to_original(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts / self.scale + np.array(self.origin)

    def box_to_crop(self, box: BoundingBox) -> BoundingBox:
        ox, oy = self.origin
        return BoundingBox((box.x - ox) * self.scale, (box.y - oy) * self.scale,
                           box.w * self.scale, box.h * self.scale)

    def box_to_original(self, box: BoundingBox) -> BoundingBox:
        ox, oy = self.origin
        return BoundingBox(box.x / self.scale + ox, box.y / self.scale + oy,
                           box.w / self.scale, box.h / self.scale)


@dataclass
class Frame:
    """One 8-bit video frame, grayscale (H, W) or RGB (H, W, 3).

    ``crop`` records provenance when the frame is a crop/resample of an
    original frame; ``index`` always refers to the original frame number.
    """

    index: int
    pixels: np.ndarray
    crop: CropTransform | None = None

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            raise ValueError(f"frame pixels must be uint8, got {px.dtype}")
        if px.ndim == 3 and px.shape[2] != 3:
            raise ValueError(f"colour frames must have 3 channels, got {px.shape[2]}")
        if px.ndim not in (2, 3) or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"bad frame shape {px.shape}")
        if self.index < 0:
            raise ValueError("frame index must be non-negative")
        self.pixels = px

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3


@dataclass
class VideoSequence:
    """Frames ordered by index, contiguous from zero."""

    frames: list[Frame]
    sequence_id: str = "seq"

    def __post_init__(self) -> None:
        if not self.frames:
            raise ValueError("a video needs at least one frame")
        for i, f in enumerate(self.frames):
            if f.index != i:
                raise ValueError(f"frame {i} carries index {f.index}; expected contiguous indices")

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i: int) -> Frame:
        return self.frames[i]


@dataclass(frozen=True)
class PipelineConfig:
    """Tracker configuration.

    Defaults follow the tested reference configuration: keyframe interval 20,
    20 sampled points, distance-precision threshold 5 px and overlap-success
    threshold 0.5.
    """

    keyframe_interval: int = 20
    num_points: int = 20
    dpr_threshold: float = 5.0
    osr_threshold: float = 0.5
    small_object_max_dim: float = 32.0
    crop_context_factor: float = 4.0
    target_min_dim_after_resample: float = 32.0
    rng_seed: int = 7

    def __post_init__(self) -> None:
        if self.keyframe_interval < 1:
            raise ValueError("keyframe_interval must be >= 1")
        if self.num_points < 1:
            raise ValueError("num_points must be >= 1")
        if not self.dpr_threshold > 0:
            raise ValueError("dpr_threshold must be positive")
        if not (0.0 < self.osr_threshold < 1.0):
            raise ValueError("osr_threshold must lie in (0, 1)")
        if not self.crop_context_factor >= 1.0:
            raise ValueError("crop_context_factor must be >= 1")

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        return replace(self, **kwargs)
