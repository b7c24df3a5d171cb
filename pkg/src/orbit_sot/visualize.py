"""Overlay rendering: boxes and the track trajectory drawn onto each frame.

Each output frame shows the predicted box (solid), the ground-truth box
(dashed, when provided), and the trajectory so far — a polyline through the
per-frame box centers with a dot per frame, color-graded from pure red at
the first frame to pure green at the last.
"""
from __future__ import annotations

import math
from pathlib import Path

from PIL import Image, ImageDraw

from .simulator import frame_filename
from .types import BoundingBox, VideoSequence

PRED_COLOR = (255, 200, 0)
GT_COLOR = (80, 160, 255)


def trajectory_color(progress: float) -> tuple[int, int, int]:
    """Pure red at progress 0, pure green at progress 1."""
    return (round(255 * (1.0 - progress)), round(255 * progress), 0)


def _corners(box: BoundingBox) -> tuple[int, int, int, int]:
    """Inclusive pixel corners covering the box extent."""
    return (math.floor(box.x), math.floor(box.y),
            max(math.floor(box.x), math.ceil(box.x2) - 1),
            max(math.floor(box.y), math.ceil(box.y2) - 1))


def _dashed_rectangle(draw: ImageDraw.ImageDraw, corners: tuple[int, int, int, int],
                      color: tuple[int, int, int], on: int = 3, off: int = 3) -> None:
    x0, y0, x1, y1 = corners
    edges = (((x0, y0), (x1, y0)), ((x1, y0), (x1, y1)),
             ((x1, y1), (x0, y1)), ((x0, y1), (x0, y0)))
    for (ax, ay), (bx, by) in edges:
        length = max(abs(bx - ax), abs(by - ay))
        if length == 0:
            continue
        ux, uy = (bx - ax) / length, (by - ay) / length
        pos = 0
        while pos <= length:
            end = min(pos + on - 1, length)
            draw.line([(ax + ux * pos, ay + uy * pos),
                       (ax + ux * end, ay + uy * end)], fill=color)
            pos = end + 1 + off


def _dot(draw: ImageDraw.ImageDraw, cx: float, cy: float,
         color: tuple[int, int, int]) -> None:
    px, py = math.floor(cx), math.floor(cy)
    draw.rectangle([px - 1, py - 1, px + 1, py + 1], fill=color)


def render_overlays(video: VideoSequence, boxes: list[BoundingBox],
                    out_dir: Path | str,
                    gt_boxes: list[BoundingBox] | None = None) -> list[Path]:
    """Write one overlay PNG per frame; returns the paths in frame order."""
    if len(boxes) != len(video):
        raise ValueError(f"{len(boxes)} boxes for {len(video)} frames")
    if gt_boxes is not None and len(gt_boxes) != len(video):
        raise ValueError(f"{len(gt_boxes)} ground-truth boxes for "
                         f"{len(video)} frames")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(video)
    centers = [b.center for b in boxes]
    paths: list[Path] = []
    for t, frame in enumerate(video.frames):
        image = Image.fromarray(frame.pixels).convert("RGB")
        draw = ImageDraw.Draw(image)
        if gt_boxes is not None:
            _dashed_rectangle(draw, _corners(gt_boxes[t]), GT_COLOR)
        draw.rectangle(_corners(boxes[t]), outline=PRED_COLOR)
        for k in range(1, t + 1):
            progress = k / (n - 1) if n > 1 else 0.0
            draw.line([centers[k - 1], centers[k]], fill=trajectory_color(progress))
        for k in range(t + 1):
            progress = k / (n - 1) if n > 1 else 0.0
            _dot(draw, centers[k][0], centers[k][1], trajectory_color(progress))
        path = out / frame_filename(t)
        image.save(path)
        paths.append(path)
    return paths
