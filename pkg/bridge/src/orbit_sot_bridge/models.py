"""Model backends for the bridge: the deterministic stub and real adapters.

Both backends answer the same two questions.  ``segment`` turns one image
plus a prompt (``box``, ``point``, or ``points``) into a boolean mask of the
image's size.  ``track`` turns a clip plus query points into per-frame
positions and visibility flags.

The stub answers from geometry alone: a box prompt becomes the set of
pixels whose centres lie inside the box, a point prompt becomes a 3x3
square on the pixel containing it, and tracking echoes the query points
across every frame as visible.  It needs no checkpoints, is bit-stable
across runs, and exists so that clients can exercise the full wire protocol
without model weights.

The real adapters (SAM for segmentation, TAPIR for tracking) live in
:mod:`orbit_sot_bridge.real` and are imported only when checkpoints are
given, so the stub path never touches torch.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

import numpy as np


class RequestError(Exception):
    """A request was understood but cannot be served as asked."""


class ModelLoadError(Exception):
    """Model weights or their runtime could not be loaded."""


class Models(Protocol):
    def segment(self, image: np.ndarray, prompt: dict[str, Any]) -> np.ndarray: ...

    def track(
        self, images: list[np.ndarray], queries: list[list[float]]
    ) -> tuple[list[list[list[float]]], list[list[bool]]]: ...


def box_mask(
    x: float, y: float, w: float, h: float, width: int, height: int
) -> np.ndarray:
    """Pixels whose centres fall inside the half-open box [x,x+w) x [y,y+h).

    Pixel (row i, col j) has its centre at (j + 0.5, i + 0.5), so column j is
    covered iff x <= j + 0.5 < x + w, i.e. j runs from ceil(x - 0.5) up to
    but excluding ceil(x + w - 0.5); rows follow the same rule in y.
    """
    mask = np.zeros((height, width), dtype=bool)
    j0 = max(0, math.ceil(x - 0.5))
    j1 = min(width, math.ceil(x + w - 0.5))
    i0 = max(0, math.ceil(y - 0.5))
    i1 = min(height, math.ceil(y + h - 0.5))
    if j0 < j1 and i0 < i1:
        mask[i0:i1, j0:j1] = True
    return mask


def point_square(x: float, y: float, width: int, height: int) -> np.ndarray:
    """A 3x3 square of pixels centred on the pixel containing (x, y)."""
    mask = np.zeros((height, width), dtype=bool)
    col = int(math.floor(x))
    row = int(math.floor(y))
    i0, i1 = max(0, row - 1), min(height, row + 2)
    j0, j1 = max(0, col - 1), min(width, col + 2)
    if i0 < i1 and j0 < j1:
        mask[i0:i1, j0:j1] = True
    return mask


def rle_encode(mask: np.ndarray) -> str:
    """Column-major run-length counts, alternating and starting with zeros.

    The first count is the number of leading zero pixels (possibly 0), and
    counts alternate zero-run / one-run from there, scanning down column 0
    first, then column 1, and so on.
    """
    flat = np.asarray(mask, dtype=bool).flatten(order="F").tolist()
    counts = [len(list(group)) for _, group in itertools.groupby(flat)]
    if flat and flat[0]:
        counts.insert(0, 0)
    if not counts:
        counts = [0]
    return " ".join(str(c) for c in counts)


class StubModels:
    """Geometry-only answers; deterministic and checkpoint-free."""

    def segment(self, image: np.ndarray, prompt: dict[str, Any]) -> np.ndarray:
        height, width = image.shape[:2]
        if "box" in prompt:
            x, y, w, h = (float(v) for v in prompt["box"])
            return box_mask(x, y, w, h, width, height)
        if "point" in prompt:
            x, y = (float(v) for v in prompt["point"])
            return point_square(x, y, width, height)
        if "points" in prompt:
            points = prompt["points"]
            if not points:
                raise RequestError("prompt.points must not be empty")
            mask = np.zeros((height, width), dtype=bool)
            for point in points:
                x, y = (float(v) for v in point)
                mask |= point_square(x, y, width, height)
            return mask
        raise RequestError("prompt must contain one of: box, point, points")

    def track(
        self, images: list[np.ndarray], queries: list[list[float]]
    ) -> tuple[list[list[list[float]]], list[list[bool]]]:
        positions = [
            [[float(x), float(y)] for x, y in queries] for _ in range(len(images))
        ]
        visible = [[True] * len(queries) for _ in range(len(images))]
        return positions, visible


@dataclass(frozen=True)
class BridgeConfig:
    """Everything the serving loop needs to answer requests.

    ``session_dir`` is the one field not known at process start: the client
    announces it in ``hello``, so the serving loop fills it in before any
    request is handled.
    """

    sam_checkpoint: str | None
    tapir_checkpoint: str | None
    device: str
    stub: bool
    session_dir: Path | None = None

    def load_models(self) -> Models:
        """Build the backend, loading checkpoints when not in stub mode.

        Raises :class:`ModelLoadError` when weights or their runtime are
        unavailable; the server turns that into an error reply and exit
        code 3.
        """
        if self.stub:
            return StubModels()
        if not self.sam_checkpoint or not self.tapir_checkpoint:
            raise ModelLoadError(
                "--sam-checkpoint and --tapir-checkpoint are required "
                "unless --stub is given"
            )
        from .real import RealModels

        return RealModels(self.sam_checkpoint, self.tapir_checkpoint, self.device)
