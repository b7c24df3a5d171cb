"""Deterministic synthetic satellite scenes with exact per-frame ground truth.

A scene is a textured grayscale background with one small moving target and
optional same-looking distractors.  Object masks are exact rasterizations of
the analytic shape at each frame's analytic position, so ground truth is
knowable to the bit — which is what the oracle backends and the acceptance
suite rely on.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import SceneError
from .raster import bbox_from_mask, rasterize_box
from .seeding import STREAM_PLACEMENT, STREAM_RENDER, STREAM_SCENE, derive_seed, stream
from .types import BoundingBox, Frame, Mask, VideoSequence

SHAPES = ("rectangle", "ellipse")


@dataclass(frozen=True)
class SceneConfig:
    """Everything needed to regenerate one scene bit-exactly."""

    width: int = 160
    height: int = 120
    frame_count: int = 60
    shape: str = "rectangle"
    object_w: int = 8
    object_h: int = 6
    contrast: float = 80.0
    start_x: float = 20.0
    start_y: float = 20.0
    velocity: tuple[float, float] = (0.5, 0.25)
    sway_amplitude: float = 0.0
    sway_period: float = 20.0
    noise_sigma: float = 2.0
    texture_seed: int = 0
    distractor_count: int = 0
    seed: int = 0
    scene_id: str = "scene"

    def __post_init__(self) -> None:
        if self.width < 8 or self.height < 8:
            raise SceneError("frame must be at least 8x8 pixels")
        if self.frame_count < 1:
            raise SceneError("frame_count must be >= 1")
        if self.shape not in SHAPES:
            raise SceneError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if self.object_w < 2 or self.object_h < 2:
            raise SceneError("object size must be at least 2x2 pixels")
        if self.sway_period <= 0:
            raise SceneError("sway_period must be positive")
        if self.noise_sigma < 0:
            raise SceneError("noise_sigma must be non-negative")
        # frozen dataclass: normalize velocity to a plain tuple via __setattr__
        object.__setattr__(self, "velocity", (float(self.velocity[0]), float(self.velocity[1])))

    def position(self, frame_index: int) -> tuple[float, float]:
        """Analytic top-left corner of the object box at a frame."""
        t = float(frame_index)
        x = self.start_x + self.velocity[0] * t
        y = self.start_y + self.velocity[1] * t
        if self.sway_amplitude:
            y += self.sway_amplitude * math.sin(2.0 * math.pi * t / self.sway_period)
        return x, y

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - fields
        if unknown:
            raise SceneError(f"unknown scene fields: {sorted(unknown)}")
        if "velocity" in data:
            data = dict(data, velocity=tuple(data["velocity"]))
        return cls(**data)


@dataclass
class ObjectTrack:
    """Exact ground truth for one object: per-frame mask, box and centre."""

    masks: list[Mask]
    boxes: list[BoundingBox]
    centers: np.ndarray  # (frame_count, 2) analytic centres


@dataclass
class GroundTruth:
    """Per-frame truth for the target and every distractor."""

    target: ObjectTrack
    distractors: list[ObjectTrack]

    @property
    def frame_count(self) -> int:
        return len(self.target.masks)


def _rasterize_shape(cfg: SceneConfig, x: float, y: float) -> Mask:
    if cfg.shape == "rectangle":
        return rasterize_box(BoundingBox(x, y, cfg.object_w, cfg.object_h),
                             cfg.width, cfg.height)
    # ellipse inscribed in the box, closed boundary
    cx, cy = x + cfg.object_w / 2.0, y + cfg.object_h / 2.0
    ax, ay = cfg.object_w / 2.0, cfg.object_h / 2.0
    cols = (np.arange(cfg.width) + 0.5 - cx) / ax
    rows = (np.arange(cfg.height) + 0.5 - cy) / ay
    return Mask(rows[:, None] ** 2 + cols[None, :] ** 2 <= 1.0)


def _build_track(cfg: SceneConfig, start_x: float, start_y: float,
                 label: str) -> ObjectTrack:
    masks: list[Mask] = []
    boxes: list[BoundingBox] = []
    centers = np.zeros((cfg.frame_count, 2), dtype=np.float64)
    dx, dy = start_x - cfg.start_x, start_y - cfg.start_y
    for t in range(cfg.frame_count):
        px, py = cfg.position(t)
        x, y = px + dx, py + dy
        if x < 0 or y < 0 or x + cfg.object_w > cfg.width or y + cfg.object_h > cfg.height:
            raise SceneError(
                f"{label} leaves the frame at frame {t}: "
                f"box ({x:g},{y:g},{cfg.object_w},{cfg.object_h}) "
                f"vs frame {cfg.width}x{cfg.height}")
        mask = _rasterize_shape(cfg, x, y)
        masks.append(mask)
        boxes.append(bbox_from_mask(mask))
        centers[t] = (x + cfg.object_w / 2.0, y + cfg.object_h / 2.0)
    return ObjectTrack(masks, boxes, centers)


def _place_distractors(cfg: SceneConfig) -> list[tuple[float, float]]:
    """Distractor start positions: inside the frame for the whole scene,
    never within 2 px of the target or each other (same velocity, so the
    frame-0 separation holds for all frames)."""
    if cfg.distractor_count == 0:
        return []
    lo_x, hi_x, lo_y, hi_y = _valid_start_range(cfg)
    rng = stream(cfg.seed, STREAM_PLACEMENT)
    placed: list[tuple[float, float]] = []
    anchors = [(cfg.start_x, cfg.start_y)]
    for d in range(cfg.distractor_count):
        for _ in range(200):
            x0 = float(rng.integers(lo_x, hi_x + 1))
            y0 = float(rng.integers(lo_y, hi_y + 1))
            if all(abs(x0 - ax) >= cfg.object_w + 2 or abs(y0 - ay) >= cfg.object_h + 2
                   for ax, ay in anchors):
                placed.append((x0, y0))
                anchors.append((x0, y0))
                break
        else:
            raise SceneError(
                f"could not place distractor {d + 1} of {cfg.distractor_count} "
                f"without overlap in a {cfg.width}x{cfg.height} frame")
    return placed


def _valid_start_range(cfg: SceneConfig) -> tuple[int, int, int, int]:
    """Integer start positions that keep an object with the scene's motion
    fully inside the frame for every frame."""
    last = cfg.frame_count - 1
    dx = cfg.velocity[0] * last
    dy_lin = cfg.velocity[1] * last
    sway = abs(cfg.sway_amplitude)
    lo_x = math.ceil(max(0.0, -dx))
    hi_x = math.floor(cfg.width - cfg.object_w - max(0.0, dx))
    lo_y = math.ceil(max(0.0, -dy_lin) + sway)
    hi_y = math.floor(cfg.height - cfg.object_h - max(0.0, dy_lin) - sway)
    if lo_x > hi_x or lo_y > hi_y:
        raise SceneError(
            f"no start position fits: motion spans ({dx:g},{dy_lin:g}) px "
            f"in a {cfg.width}x{cfg.height} frame")
    return lo_x, hi_x, lo_y, hi_y


def ground_truth(cfg: SceneConfig) -> GroundTruth:
    """Exact per-frame masks/boxes for the target and distractors."""
    target = _build_track(cfg, cfg.start_x, cfg.start_y, "target")
    distractors = [
        _build_track(cfg, x0, y0, f"distractor {k + 1}")
        for k, (x0, y0) in enumerate(_place_distractors(cfg))
    ]
    return GroundTruth(target, distractors)


def generate(cfg: SceneConfig) -> tuple[VideoSequence, GroundTruth]:
    """Render the scene; deterministic per config."""
    gt = ground_truth(cfg)
    texture_rng = np.random.default_rng(derive_seed(cfg.texture_seed, STREAM_RENDER))
    texture = texture_rng.integers(108, 133, (cfg.height, cfg.width)).astype(np.float64)
    frames: list[Frame] = []
    for t in range(cfg.frame_count):
        canvas = texture.copy()
        canvas[gt.target.masks[t].bits] += cfg.contrast
        for track in gt.distractors:
            canvas[track.masks[t].bits] += cfg.contrast
        if cfg.noise_sigma > 0:
            noise_rng = stream(cfg.seed, STREAM_RENDER, t)
            canvas += noise_rng.normal(0.0, cfg.noise_sigma, canvas.shape)
        pixels = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
        frames.append(Frame(index=t, pixels=pixels))
    return VideoSequence(frames, sequence_id=cfg.scene_id), gt


# the fixed acceptance suite ------------------------------------------------

_SUITE_CLASSES = (
    # (name, (w, h), (|vx|, |vy|) px/frame, distractors)
    ("tiny", (4, 3), (0.25, 0.2), 0),
    ("small", (8, 6), (0.4, 0.25), 0),
    ("medium", (16, 12), (0.2, 0.1), 0),
    ("cluttered", (8, 6), (0.4, 0.25), 3),
)

_SUITE_SIGNS = ((1, 1), (1, -1), (-1, 1), (-1, -1), (1, 0))


def standard_suite(seed: int) -> list[SceneConfig]:
    """The fixed 20-scene suite: 5 scenes per class, 60 frames each.

    Velocities are multiples of 0.05 chosen so 20 frames of motion lands on
    whole pixels and the object never outruns its 4x context window between
    keyframe renewals.
    """
    configs: list[SceneConfig] = []
    for i in range(20):
        cls = i // 5
        variant = i % 5
        name, (w, h), (sx, sy), distractors = _SUITE_CLASSES[cls]
        sign_x, sign_y = _SUITE_SIGNS[variant]
        velocity = (sign_x * sx, sign_y * sy)
        shape = SHAPES[i % 2]
        scene_seed = derive_seed(seed, STREAM_SCENE, i)
        probe = SceneConfig(
            shape=shape, object_w=w, object_h=h, velocity=velocity,
            distractor_count=distractors, seed=scene_seed,
            texture_seed=derive_seed(seed, STREAM_SCENE, i, 1),
            scene_id=f"scene{i:02d}_{name}",
        )
        lo_x, hi_x, lo_y, hi_y = _valid_start_range(probe)
        rng = stream(seed, STREAM_SCENE, i, 2)
        start_x = float(rng.integers(lo_x, hi_x + 1))
        start_y = float(rng.integers(lo_y, hi_y + 1))
        configs.append(dataclasses.replace(probe, start_x=start_x, start_y=start_y))
    return configs


# on-disk layout -------------------------------------------------------------

def frame_filename(frame_index: int) -> str:
    """Zero-padded 1-based PNG name for a frame index."""
    return f"{frame_index + 1:06d}.png"


def annotation_text(gt: GroundTruth) -> str:
    """Ground truth in the evaluation line format ``frame,id,x,y,w,h,gt``
    with 1-based frames; object id 1 is the target, ids 2+ are distractors."""
    lines = []
    tracks = [gt.target] + gt.distractors
    for t in range(gt.frame_count):
        for obj_id, track in enumerate(tracks, start=1):
            b = track.boxes[t]
            lines.append(f"{t + 1},{obj_id},{b.x:g},{b.y:g},{b.w:g},{b.h:g},gt")
    return "\n".join(lines) + "\n"


def export_scene(cfg: SceneConfig, out_dir: Path | str) -> Path:
    """Materialise a scene: numbered PNGs, gt.csv and scene.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    video, gt = generate(cfg)
    for frame in video.frames:
        Image.fromarray(frame.pixels).save(out / frame_filename(frame.index))
    (out / "gt.csv").write_text(annotation_text(gt))
    (out / "scene.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return out
