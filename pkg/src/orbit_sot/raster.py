"""Pure raster and geometry kernels.

All functions are pure: they never mutate their inputs and are safe to call
concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import EmptyMaskError, NoConsensusError
from .types import BoundingBox, CropTransform, Frame, Heatmap, Mask, PipelineConfig, PointSet

# 4-connectivity structuring element for consensus components
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when disjoint."""
    ix = max(a.x, b.x)
    iy = max(a.y, b.y)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = ix2 - ix
    ih = iy2 - iy
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def center_distance(a: BoundingBox, b: BoundingBox) -> float:
    """Euclidean distance between box centres, in pixels."""
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)


def aggregate_heatmap(masks: list[Mask], shape: tuple[int, int] | None = None) -> Heatmap:
    """Point-wise sum of binary masks into an overlap-count heatmap.

    ``shape`` is ``(height, width)`` and is required only when ``masks`` is
    empty; otherwise dimensions are taken from the masks, which must agree.
    """
    if not masks:
        if shape is None:
            raise ValueError("empty mask list needs an explicit heatmap shape")
        return Heatmap(np.zeros(shape, dtype=np.int32))
    h, w = masks[0].bits.shape
    counts = np.zeros((h, w), dtype=np.int32)
    for k, m in enumerate(masks):
        if m.bits.shape != (h, w):
            raise ValueError(
                f"mask {k} has shape {m.bits.shape}, expected {(h, w)}")
        counts += m.bits
    return Heatmap(counts)


@dataclass(frozen=True)
class ConsensusRegion:
    """Peak pixel (row, col), its overlap count, and the agreeing component."""

    peak_row: int
    peak_col: int
    peak_count: int
    region: Mask


def consensus_region(heatmap: Heatmap) -> ConsensusRegion:
    """Locate where the most masks agree.

    The peak is the maximum-count pixel (ties broken by smallest row, then
    smallest column).  The region is the 4-connected component containing the
    peak among pixels with count >= ceil(peak_count / 2).  An all-zero
    heatmap signals "no consensus".
    """
    counts = heatmap.counts
    flat_peak = int(np.argmax(counts))  # first occurrence = (row, col) tie-break
    peak_row, peak_col = divmod(flat_peak, counts.shape[1])
    peak_count = int(counts[peak_row, peak_col])
    if peak_count == 0:
        raise NoConsensusError("heatmap is all zero; no consensus region")
    threshold = -(-peak_count // 2)
    candidates = counts >= threshold
    labels, _ = ndimage.label(candidates, structure=_CROSS)
    region = labels == labels[peak_row, peak_col]
    return ConsensusRegion(peak_row, peak_col, peak_count, Mask(region))


def bbox_from_mask(mask: Mask) -> BoundingBox:
    """Tightest integer-aligned box covering every set bit."""
    rows = np.flatnonzero(mask.bits.any(axis=1))
    cols = np.flatnonzero(mask.bits.any(axis=0))
    if rows.size == 0:
        raise EmptyMaskError("cannot take the bounding box of an empty mask")
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return BoundingBox(float(x0), float(y0), float(x1 - x0 + 1), float(y1 - y0 + 1))


def bbox_from_points(points: PointSet, min_dim: float) -> BoundingBox:
    """Tightest box over the points, each dimension symmetrically expanded
    to at least ``min_dim``."""
    if points.is_empty:
        raise EmptyMaskError("cannot take the bounding box of an empty point set")
    if not min_dim > 0:
        raise ValueError("min_dim must be positive")
    lo = points.points.min(axis=0)
    hi = points.points.max(axis=0)
    x, y = float(lo[0]), float(lo[1])
    w, h = float(hi[0] - lo[0]), float(hi[1] - lo[1])
    if w < min_dim:
        x -= (min_dim - w) / 2.0
        w = min_dim
    if h < min_dim:
        y -= (min_dim - h) / 2.0
        h = min_dim
    return BoundingBox(x, y, w, h)


def rasterize_box(box: BoundingBox, width: int, height: int) -> Mask:
    """Pixels whose centres fall inside the half-open box."""
    j0 = max(0, math.ceil(box.x - 0.5))
    j1 = min(width, math.ceil(box.x2 - 0.5))
    i0 = max(0, math.ceil(box.y - 0.5))
    i1 = min(height, math.ceil(box.y2 - 0.5))
    bits = np.zeros((height, width), dtype=bool)
    if j1 > j0 and i1 > i0:
        bits[i0:i1, j0:j1] = True
    return Mask(bits)


def crop_transform_for(box: BoundingBox, frame_width: int, frame_height: int,
                       cfg: PipelineConfig) -> CropTransform:
    """Transform for the crop/resample window around a small-object box.

    Objects at or above ``small_object_max_dim`` get the identity transform.
    The window is the box scaled about its centre by ``crop_context_factor``,
    snapped to whole pixels and clamped to the frame; the resampling factor
    makes the smaller object dimension reach ``target_min_dim_after_resample``.
    """
    if min(box.w, box.h) >= cfg.small_object_max_dim:
        return CropTransform(BoundingBox(0.0, 0.0, float(frame_width), float(frame_height)), 1.0)
    window = box.scaled_about_center(cfg.crop_context_factor)
    x0 = max(0, min(frame_width - 1, math.floor(window.x)))
    y0 = max(0, min(frame_height - 1, math.floor(window.y)))
    x1 = max(0, min(frame_width, math.ceil(window.x2)))
    y1 = max(0, min(frame_height, math.ceil(window.y2)))
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"crop window {window.as_tuple()} lies outside the frame")
    scale = max(1.0, cfg.target_min_dim_after_resample / min(box.w, box.h))
    return CropTransform(BoundingBox(float(x0), float(y0), float(x1 - x0), float(y1 - y0)), scale)


def apply_crop(frame: Frame, transform: CropTransform) -> Frame:
    """Materialise the crop/resample of a frame under ``transform``.

    Identity transforms return the frame unchanged.  Resampling is bilinear;
    the sub-frame keeps the original frame index and records its provenance.
    """
    if transform.is_identity:
        return frame
    x0 = int(transform.source_box.x)
    y0 = int(transform.source_box.y)
    x1 = x0 + int(transform.source_box.w)
    y1 = y0 + int(transform.source_box.h)
    window = frame.pixels[y0:y1, x0:x1]
    out_w, out_h = transform.output_size
    img = Image.fromarray(window)
    resized = np.asarray(img.resize((out_w, out_h), Image.BILINEAR), dtype=np.uint8)
    return Frame(index=frame.index, pixels=resized, crop=transform)


def crop_resample(frame: Frame, box: BoundingBox, cfg: PipelineConfig) -> tuple[Frame, CropTransform]:
    """Crop the context window around ``box`` and upscale it for small objects.

    Returns the sub-frame together with the transform mapping sub-frame
    coordinates back to original coordinates.  Pass-through (identity
    transform, scale 1) when the object is not small.
    """
    transform = crop_transform_for(box, frame.width, frame.height, cfg)
    return apply_crop(frame, transform), transform


def mask_to_original(mask: Mask, transform: CropTransform,
                     frame_width: int, frame_height: int) -> Mask:
    """Resample a crop-space mask back onto the original pixel grid.

    Each original pixel inside the crop window takes the bit of the crop
    pixel its centre lands in; pixels outside the window are clear.
    """
    if transform.is_identity:
        if mask.bits.shape != (frame_height, frame_width):
            raise ValueError("identity transform but mask dimensions differ from frame")
        return Mask(mask.bits.copy())
    x0 = int(transform.source_box.x)
    y0 = int(transform.source_box.y)
    win_w = int(transform.source_box.w)
    win_h = int(transform.source_box.h)
    s = transform.scale
    cols = np.floor((np.arange(win_w) + 0.5) * s).astype(int)
    rows = np.floor((np.arange(win_h) + 0.5) * s).astype(int)
    cols = np.clip(cols, 0, mask.width - 1)
    rows = np.clip(rows, 0, mask.height - 1)
    out = np.zeros((frame_height, frame_width), dtype=bool)
    out[y0:y0 + win_h, x0:x0 + win_w] = mask.bits[np.ix_(rows, cols)]
    return Mask(out)


def sample_points(mask: Mask, n: int, seed: int, frame_index: int = 0) -> PointSet:
    """Draw ``n`` points from the set-bit pixel centres of a mask.

    Points are drawn uniformly without replacement; when the mask holds fewer
    than ``n`` set bits, every set pixel is taken once and the remainder is
    drawn with replacement.  Deterministic for a fixed seed.
    """
    idx = np.flatnonzero(mask.bits)
    if idx.size == 0:
        raise EmptyMaskError("cannot sample points from an empty mask")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if idx.size >= n:
        chosen = idx[rng.choice(idx.size, size=n, replace=False)]
    else:
        extra = idx[rng.integers(0, idx.size, size=n - idx.size)]
        chosen = np.concatenate([idx, extra])
    rows, cols = np.divmod(chosen, mask.width)
    pts = np.stack([cols + 0.5, rows + 0.5], axis=1).astype(np.float64)
    return PointSet(pts, frame_index=frame_index)


def erode_mask(mask: Mask, radius: int) -> Mask:
    """Morphological erosion (radius > 0) or dilation (radius < 0).

    Uses the 4-connected cross element, iterated ``|radius|`` times — the
    same connectivity as consensus regions, and gentle enough that a single
    erosion keeps a few-pixel object non-empty.
    """
    if radius == 0:
        return Mask(mask.bits.copy())
    if radius > 0:
        bits = ndimage.binary_erosion(mask.bits, structure=_CROSS, iterations=radius)
    else:
        bits = ndimage.binary_dilation(mask.bits, structure=_CROSS, iterations=-radius)
    return Mask(bits)


def rle_encode(mask: Mask) -> str:
    """Column-major run-length counts, alternating runs starting with zeros.

    The first count is the number of leading zero pixels in column-major
    (Fortran) order and may be 0; counts are space-separated decimals.  This
    is the mask wire format.
    """
    flat = mask.bits.flatten(order="F")
    # boundaries between runs of equal values
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate([[0], changes, [flat.size]])
    counts = np.diff(edges).tolist()
    if flat[0]:
        counts = [0] + counts
    return " ".join(str(c) for c in counts)


def rle_decode(counts: str, width: int, height: int) -> Mask:
    """Inverse of :func:`rle_encode`."""
    total = width * height
    if counts.strip() == "":
        runs: list[int] = []
    else:
        try:
            runs = [int(tok) for tok in counts.split()]
        except ValueError as exc:
            raise ValueError(f"bad run-length counts: {exc}") from exc
    if any(r < 0 for r in runs):
        raise ValueError("run-length counts must be non-negative")
    if sum(runs) != total:
        raise ValueError(f"run-length counts sum to {sum(runs)}, expected {total}")
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    return Mask(flat.reshape((height, width), order="F"))
