"""Ground-truth-driven backend for desk-scale verification.

The oracle answers segmentation prompts from the simulator's exact masks and
track requests from the target's analytic motion.  A seeded noise model —
per-point Gaussian jitter, per-point per-frame dropout, and mask boundary
erosion/dilation — lets tests exercise consensus recovery deliberately.

The oracle is single-object: it only ever returns pixels of the target, so a
prompt on a distractor or on background yields an empty mask.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from ..raster import erode_mask, rasterize_box
from ..seeding import STREAM_DROPOUT, STREAM_JITTER, stream
from ..simulator import GroundTruth
from ..types import Frame, Mask
from .base import SegmentRequest, TrackRequest, Trajectory


@dataclass(frozen=True)
class OracleNoise:
    """Deterministic corruption applied to oracle replies.

    ``jitter_sigma`` is in original-frame pixels (scene-referenced tracking
    error); ``dropout_p`` is the per-point per-frame probability of a false
    "occluded" flag (never on the first frame of a request);
    ``erosion_radius`` erodes (> 0) or dilates (< 0) every segmentation
    reply's mask by that many pixels of the reply's own raster — boundary
    error at the resolution the segmenter sees.  All noise derives from
    ``seed``.
    """

    jitter_sigma: float = 0.0
    dropout_p: float = 0.0
    erosion_radius: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be non-negative")
        if not 0.0 <= self.dropout_p <= 1.0:
            raise ValueError("dropout_p must lie in [0, 1]")

    @property
    def is_noiseless(self) -> bool:
        return self.jitter_sigma == 0 and self.dropout_p == 0 and self.erosion_radius == 0


def _grid_lookup(bits: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bit at the pixel containing each (x, y); False outside the raster."""
    h, w = bits.shape
    cols = np.floor(xs).astype(int)
    rows = np.floor(ys).astype(int)
    inside = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
    out = np.zeros(xs.shape, dtype=bool)
    if inside.any():
        out[inside] = bits[rows[inside], cols[inside]]
    return out


class OracleBackend:
    """In-process backend session over one scene's ground truth.

    Replies are bit-exact functions of (ground truth, noise, request), so a
    session is safe to share across threads; the per-request-raster mask
    cache is the only mutable state and sits behind a lock.
    """

    def __init__(self, gt: GroundTruth, noise: OracleNoise | None = None) -> None:
        self.gt = gt
        self.noise = noise or OracleNoise()
        self._mask_cache: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()

    # -- session lifecycle ---------------------------------------------------

    def close(self) -> None:
        """In-process session; nothing to tear down. Idempotent."""

    # -- segmentation ---------------------------------------------------------

    def _request_key(self, frame: Frame) -> tuple:
        if frame.crop is None or frame.crop.is_identity:
            return (frame.index, None)
        t = frame.crop
        return (frame.index, t.source_box.as_tuple(), t.scale)

    def _reply_bits(self, frame: Frame) -> np.ndarray:
        """Effective target mask on the request frame's own pixel grid.

        For a crop/resample sub-frame, each sub-frame pixel takes the bit of
        the original pixel its centre maps back into.  Erosion/dilation noise
        then acts on this reply raster: it models segmentation boundary error
        at the resolution the segmenter actually sees, which is exactly the
        error the crop/resample step exists to dilute.  (Jitter, by contrast,
        stays in original pixels — it models scene-referenced tracking error.)
        """
        key = self._request_key(frame)
        with self._lock:
            cached = self._mask_cache.get(key)
        if cached is not None:
            return cached
        bits = self.gt.target.masks[frame.index].bits
        t = frame.crop
        if t is not None and not t.is_identity:
            xs = (np.arange(frame.width) + 0.5) / t.scale + t.source_box.x
            ys = (np.arange(frame.height) + 0.5) / t.scale + t.source_box.y
            cols = np.clip(np.floor(xs).astype(int), 0, bits.shape[1] - 1)
            rows = np.clip(np.floor(ys).astype(int), 0, bits.shape[0] - 1)
            bits = bits[np.ix_(rows, cols)]
        if self.noise.erosion_radius:
            bits = erode_mask(Mask(bits), self.noise.erosion_radius).bits
        with self._lock:
            self._mask_cache[key] = bits
        return bits

    def segment(self, req: SegmentRequest) -> Mask:
        frame = req.frame
        object_bits = self._reply_bits(frame)
        if req.box is not None:
            prompt_bits = rasterize_box(req.box, frame.width, frame.height).bits
            hit = (object_bits & prompt_bits).any()
        elif req.point is not None:
            hit = bool(_grid_lookup(object_bits,
                                    np.array([req.point[0]]),
                                    np.array([req.point[1]]))[0])
        else:
            pts = np.asarray(req.points, dtype=np.float64)
            hit = _grid_lookup(object_bits, pts[:, 0], pts[:, 1]).any()
        if not hit:
            return Mask.zeros(frame.width, frame.height)
        return Mask(object_bits.copy())

    # -- point tracking --------------------------------------------------------

    def _to_original(self, frame: Frame, pts: np.ndarray) -> np.ndarray:
        if frame.crop is None or frame.crop.is_identity:
            return pts
        return frame.crop.to_original(pts)

    def _to_frame_space(self, frame: Frame, pts: np.ndarray) -> np.ndarray:
        if frame.crop is None or frame.crop.is_identity:
            return pts
        return frame.crop.to_crop(pts)

    def track(self, req: TrackRequest) -> Trajectory:
        frames = req.frames
        first = frames[0]
        queries = req.query_points.points
        n_frames, n_points = len(frames), len(req.query_points)

        q_orig = self._to_original(first, queries)
        # a point rides the target iff it starts on a true-object pixel;
        # erosion noise corrupts masks, not motion, so membership uses raw GT
        on_object = _grid_lookup(self.gt.target.masks[first.index].bits,
                                 q_orig[:, 0], q_orig[:, 1])
        centers = self.gt.target.centers
        base = centers[first.index]

        positions = np.zeros((n_frames, n_points, 2), dtype=np.float64)
        visible = np.ones((n_frames, n_points), dtype=bool)
        positions[0] = queries  # frame-0 echo, bit-exact

        for i in range(1, n_frames):
            frame = frames[i]
            delta = centers[frame.index] - base
            orig = q_orig.copy()
            orig[on_object] += delta
            if self.noise.jitter_sigma > 0:
                rng = stream(self.noise.seed, STREAM_JITTER, frame.index)
                orig = orig + rng.normal(0.0, self.noise.jitter_sigma, orig.shape)
            pos = self._to_frame_space(frame, orig)
            positions[i] = pos
            vis = (pos[:, 0] >= 0) & (pos[:, 0] <= frame.width) \
                & (pos[:, 1] >= 0) & (pos[:, 1] <= frame.height)
            if self.noise.dropout_p > 0:
                rng = stream(self.noise.seed, STREAM_DROPOUT, frame.index)
                vis &= rng.random(n_points) >= self.noise.dropout_p
            visible[i] = vis
        return Trajectory(positions, visible)
