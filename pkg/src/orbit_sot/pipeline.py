"""The tracking state machine.

Life of a run: segment-prompted initialization at frame 0, point propagation
in chunks of up to ``keyframe_interval`` frames, and a consensus-driven point
renewal at every keyframe.  State lives in original-frame coordinates; crop
space exists only inside individual backend calls.

Renewal at a keyframe: every arrived point prompts the segmenter
individually; the masks are summed into an overlap heatmap; the points whose
masks cover the heatmap peak are inliers; one multi-point prompt with all
inliers yields the renewal mask, from which a fresh point set is sampled.
When that chain cannot complete, a fallback re-prompts with the arrived
points' bounding box, and failing that keeps the arrived points — both
observable per frame as the ``coasted`` status (``lost`` after two
consecutive fallback keyframes).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backends.base import BackendSession, SegmentRequest, TrackRequest
from .errors import BackendError, NoConsensusError
from .raster import (
    aggregate_heatmap,
    bbox_from_mask,
    bbox_from_points,
    consensus_region,
    crop_transform_for,
    apply_crop,
    mask_to_original,
    sample_points,
)
from .seeding import STREAM_FALLBACK, STREAM_INIT, STREAM_REFRESH, derive_seed, stream
from .types import (
    BoundingBox,
    CropTransform,
    Frame,
    Mask,
    PipelineConfig,
    PointSet,
    VideoSequence,
)

TRACKED = "tracked"
COASTED = "coasted"
LOST = "lost"

CONSENSUS = "consensus"
FALLBACK_BOX = "fallback_box"
FALLBACK_KEEP = "fallback_keep"


@dataclass
class TrackerState:
    """Everything the pipeline carries from one keyframe to the next."""

    keyframe_index: int
    points: PointSet  # original coordinates, non-empty between keyframes
    box: BoundingBox  # last emitted box, original coordinates
    crop: CropTransform  # transform in effect for the coming chunk
    keyframe_mask: Mask | None = None  # renewal mask, original coordinates
    degraded_init: bool = False
    fallback_streak: int = 0


@dataclass
class Tracklet:
    """Per-frame boxes and status flags for one tracked target."""

    sequence_id: str
    boxes: list[BoundingBox] = field(default_factory=list)
    statuses: list[str] = field(default_factory=list)

    def append(self, box: BoundingBox, status: str) -> None:
        if status not in (TRACKED, COASTED, LOST):
            raise ValueError(f"unknown status {status!r}")
        self.boxes.append(box)
        self.statuses.append(status)

    def replace_last(self, box: BoundingBox, status: str) -> None:
        self.boxes[-1] = box
        self.statuses[-1] = status

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass
class RefreshEvent:
    """How one keyframe renewal exited."""

    frame_index: int
    path: str  # consensus | fallback_box | fallback_keep
    arrived_points: int
    inliers: int


@dataclass
class RunStats:
    """Run-level observability: renewal paths and crop usage."""

    refresh_events: list[RefreshEvent] = field(default_factory=list)
    crop_used: bool = False
    degraded_init: bool = False
    track_calls: int = 0

    @property
    def consensus_refreshes(self) -> int:
        return sum(1 for e in self.refresh_events if e.path == CONSENSUS)

    @property
    def total_refreshes(self) -> int:
        return len(self.refresh_events)


@dataclass
class TrackResult:
    """A finished (or failed-partway) tracking run."""

    tracklet: Tracklet
    stats: RunStats
    state: TrackerState
    points_per_frame: list[np.ndarray]  # visible points per frame, original coords
    error: str | None = None  # backend diagnostic when the run died mid-way


def _clamped_crop_points(points: np.ndarray, transform: CropTransform,
                         width: int, height: int) -> np.ndarray:
    crop_pts = transform.to_crop(points) if not transform.is_identity else points.copy()
    crop_pts[:, 0] = np.clip(crop_pts[:, 0], 0.0, float(width))
    crop_pts[:, 1] = np.clip(crop_pts[:, 1], 0.0, float(height))
    return crop_pts


def _uniform_points_in_box(box: BoundingBox, n: int, rng: np.random.Generator) -> np.ndarray:
    xs = rng.uniform(box.x, box.x2, n)
    ys = rng.uniform(box.y, box.y2, n)
    return np.stack([xs, ys], axis=1)


def initialize(frame0: Frame, init_box: BoundingBox, cfg: PipelineConfig,
               segmenter: BackendSession) -> TrackerState:
    """Segment the initial box and sample the first point set.

    Small objects are segmented on a crop/resample sub-frame; the sampled
    points are mapped back to original coordinates.  An empty initial mask
    degrades gracefully: points are drawn uniformly inside the box and the
    state is flagged.
    """
    transform = crop_transform_for(init_box, frame0.width, frame0.height, cfg)
    sub = apply_crop(frame0, transform)
    mask = segmenter.segment(SegmentRequest(frame=sub, box=transform.box_to_crop(init_box)))
    if mask.is_empty:
        rng = stream(cfg.rng_seed, STREAM_FALLBACK, frame0.index)
        points = _uniform_points_in_box(init_box, cfg.num_points, rng)
        return TrackerState(
            keyframe_index=frame0.index,
            points=PointSet(points, frame_index=frame0.index),
            box=init_box, crop=transform, keyframe_mask=None, degraded_init=True)
    sampled = sample_points(mask, cfg.num_points, derive_seed(cfg.rng_seed, STREAM_INIT),
                            frame_index=frame0.index)
    original = transform.to_original(sampled.points) if not transform.is_identity \
        else sampled.points
    keyframe_mask = mask_to_original(mask, transform, frame0.width, frame0.height)
    return TrackerState(
        keyframe_index=frame0.index,
        points=PointSet(original, frame_index=frame0.index),
        box=init_box, crop=transform, keyframe_mask=keyframe_mask)


@dataclass
class ChunkResult:
    """Propagation output for the frames after a chunk's first frame."""

    boxes: list[BoundingBox]
    statuses: list[str]
    points_per_frame: list[np.ndarray]  # original coordinates, visible only
    arrived: PointSet  # visible points at the chunk's last frame


def propagate_chunk(frames: list[Frame], state: TrackerState,
                    tracker: BackendSession) -> tuple[ChunkResult, TrackerState]:
    """One track call across a chunk; box per frame from the visible points.

    The first frame is the current keyframe (its box was already emitted);
    results cover ``frames[1:]``.  Frames with no visible point coast on the
    previous frame's box.  A single-frame chunk is a no-op tail.
    """
    if len(frames) == 1:
        new_state = TrackerState(
            keyframe_index=frames[0].index, points=state.points, box=state.box,
            crop=state.crop, keyframe_mask=state.keyframe_mask,
            degraded_init=state.degraded_init, fallback_streak=state.fallback_streak)
        return ChunkResult([], [], [], PointSet(np.empty((0, 2)),
                                                frame_index=frames[0].index)), new_state

    transform = state.crop
    cropped = [apply_crop(f, transform) for f in frames]
    first = cropped[0]
    queries = _clamped_crop_points(state.points.points, transform,
                                   first.width, first.height)
    trajectory = tracker.track(TrackRequest(frames=cropped,
                                            query_points=PointSet(queries)))

    boxes: list[BoundingBox] = []
    statuses: list[str] = []
    points_per_frame: list[np.ndarray] = []
    previous_box = state.box
    arrived = np.empty((0, 2))
    for i in range(1, len(frames)):
        visible = trajectory.visible[i]
        if visible.any():
            pos = trajectory.positions[i][visible]
            original = transform.to_original(pos) if not transform.is_identity else pos
            box = bbox_from_points(PointSet(original), min_dim=2.0)
            boxes.append(box)
            statuses.append(TRACKED)
            points_per_frame.append(original)
            previous_box = box
            if i == len(frames) - 1:
                arrived = original
        else:
            boxes.append(previous_box)
            statuses.append(COASTED)
            points_per_frame.append(np.empty((0, 2)))

    new_state = TrackerState(
        keyframe_index=frames[-1].index, points=state.points, box=previous_box,
        crop=state.crop, keyframe_mask=state.keyframe_mask,
        degraded_init=state.degraded_init, fallback_streak=state.fallback_streak)
    return ChunkResult(boxes, statuses, points_per_frame,
                       PointSet(arrived, frame_index=frames[-1].index)), new_state


def _renew_from_mask(mask_crop: Mask, frame: Frame, transform: CropTransform,
                     state: TrackerState, cfg: PipelineConfig, sample_seed: int,
                     path: str, arrived: PointSet, inliers: int) -> tuple[TrackerState, RefreshEvent]:
    """Common tail of a successful renewal: down-map, re-box, resample."""
    renewal = mask_to_original(mask_crop, transform, frame.width, frame.height)
    if renewal.is_empty:
        raise NoConsensusError("renewal mask vanished when mapped to original resolution")
    box = bbox_from_mask(renewal)
    sampled = sample_points(mask_crop, cfg.num_points, sample_seed,
                            frame_index=frame.index)
    original = transform.to_original(sampled.points) if not transform.is_identity \
        else sampled.points
    fallback_streak = 0 if path == CONSENSUS else state.fallback_streak + 1
    new_state = TrackerState(
        keyframe_index=frame.index,
        points=PointSet(original, frame_index=frame.index),
        box=box,
        crop=crop_transform_for(box, frame.width, frame.height, cfg),
        keyframe_mask=renewal,
        degraded_init=state.degraded_init,
        fallback_streak=fallback_streak)
    event = RefreshEvent(frame.index, path, arrived_points=len(arrived), inliers=inliers)
    return new_state, event


def keyframe_refresh(frame: Frame, arrived: PointSet, state: TrackerState,
                     cfg: PipelineConfig,
                     segmenter: BackendSession) -> tuple[TrackerState, RefreshEvent]:
    """Renew the point set at a keyframe via segmentation consensus.

    Fallback chain when consensus cannot complete: re-prompt with the arrived
    points' bounding box; failing that, keep the arrived points (or, with no
    arrived points at all, the previous state) and coast.
    """
    transform = state.crop
    sub = apply_crop(frame, transform)

    if not arrived.is_empty:
        crop_points = _clamped_crop_points(arrived.points, transform,
                                           sub.width, sub.height)
        masks: list[Mask] = []
        owners: list[int] = []
        for k in range(crop_points.shape[0]):
            point = (float(crop_points[k, 0]), float(crop_points[k, 1]))
            mask = segmenter.segment(SegmentRequest(frame=sub, point=point))
            if not mask.is_empty:
                masks.append(mask)
                owners.append(k)
        try:
            if not masks:
                raise NoConsensusError("every per-point mask came back empty")
            consensus = consensus_region(aggregate_heatmap(masks))
            inlier_ids = [owners[m] for m, mask in enumerate(masks)
                          if mask.bits[consensus.peak_row, consensus.peak_col]]
            if not inlier_ids:
                raise NoConsensusError("no point's mask covers the consensus peak")
            inlier_points = tuple(
                (float(crop_points[k, 0]), float(crop_points[k, 1])) for k in inlier_ids)
            renewal_crop = segmenter.segment(SegmentRequest(frame=sub, points=inlier_points))
            if renewal_crop.is_empty:
                raise NoConsensusError("multi-point renewal prompt returned an empty mask")
            return _renew_from_mask(
                renewal_crop, frame, transform, state, cfg,
                derive_seed(cfg.rng_seed, STREAM_REFRESH, frame.index),
                CONSENSUS, arrived, inliers=len(inlier_ids))
        except NoConsensusError:
            pass

        # fallback 1: one box prompt around wherever the points arrived
        point_box = bbox_from_points(arrived, min_dim=2.0)
        fallback_mask = segmenter.segment(SegmentRequest(
            frame=sub, box=transform.box_to_crop(point_box)))
        if not fallback_mask.is_empty:
            try:
                return _renew_from_mask(
                    fallback_mask, frame, transform, state, cfg,
                    derive_seed(cfg.rng_seed, STREAM_FALLBACK, frame.index),
                    FALLBACK_BOX, arrived, inliers=0)
            except NoConsensusError:
                pass

        # fallback 2: keep the arrived points as the active set
        new_state = TrackerState(
            keyframe_index=frame.index,
            points=PointSet(arrived.points.copy(), frame_index=frame.index),
            box=point_box,
            crop=crop_transform_for(point_box, frame.width, frame.height, cfg),
            keyframe_mask=None,
            degraded_init=state.degraded_init,
            fallback_streak=state.fallback_streak + 1)
        return new_state, RefreshEvent(frame.index, FALLBACK_KEEP,
                                       arrived_points=len(arrived), inliers=0)

    # nothing arrived: carry the previous point set and box forward
    new_state = TrackerState(
        keyframe_index=frame.index,
        points=PointSet(state.points.points.copy(), frame_index=frame.index),
        box=state.box,
        crop=crop_transform_for(state.box, frame.width, frame.height, cfg),
        keyframe_mask=None,
        degraded_init=state.degraded_init,
        fallback_streak=state.fallback_streak + 1)
    return new_state, RefreshEvent(frame.index, FALLBACK_KEEP, arrived_points=0, inliers=0)


def _keyframe_status(state: TrackerState, event: RefreshEvent) -> str:
    if event.path == CONSENSUS:
        return TRACKED
    return LOST if state.fallback_streak >= 2 else COASTED


def track_sequence(video: VideoSequence, init_box: BoundingBox, cfg: PipelineConfig,
                   session: BackendSession) -> TrackResult:
    """Track one target through a whole sequence.

    Chunks span keyframe to keyframe inclusive; the shared endpoint takes the
    renewal box, not the propagated one.  A trailing chunk shorter than the
    keyframe interval is propagated without a final renewal.  Backend
    failures mid-run return the partial tracklet with a diagnostic.
    """
    stats = RunStats()
    tracklet = Tracklet(sequence_id=video.sequence_id)
    points_per_frame: list[np.ndarray] = []

    try:
        state = initialize(video[0], init_box, cfg, session)
    except BackendError as exc:
        return TrackResult(tracklet, stats, TrackerState(
            keyframe_index=0, points=PointSet(np.empty((0, 2))), box=init_box,
            crop=CropTransform(BoundingBox(0, 0, video[0].width, video[0].height), 1.0)),
            points_per_frame, error=str(exc))
    stats.degraded_init = state.degraded_init
    stats.crop_used = not state.crop.is_identity
    tracklet.append(init_box, COASTED if state.degraded_init else TRACKED)
    points_per_frame.append(state.points.points.copy())

    start = 0
    last = len(video) - 1
    try:
        while start < last:
            end = min(start + cfg.keyframe_interval, last)
            frames = [video[i] for i in range(start, end + 1)]
            chunk, state = propagate_chunk(frames, state, session)
            stats.track_calls += 1
            for box, status, pts in zip(chunk.boxes, chunk.statuses,
                                        chunk.points_per_frame):
                tracklet.append(box, status)
                points_per_frame.append(pts)
            if end - start == cfg.keyframe_interval:  # full chunk: renew at its end
                state, event = keyframe_refresh(video[end], chunk.arrived, state,
                                                cfg, session)
                stats.refresh_events.append(event)
                stats.crop_used = stats.crop_used or not state.crop.is_identity
                tracklet.replace_last(state.box, _keyframe_status(state, event))
                points_per_frame[-1] = state.points.points.copy()
            start = end
    except BackendError as exc:
        return TrackResult(tracklet, stats, state, points_per_frame, error=str(exc))

    return TrackResult(tracklet, stats, state, points_per_frame)
