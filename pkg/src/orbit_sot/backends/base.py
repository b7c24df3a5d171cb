"""Backend contracts: request/reply types, session protocol, spec dispatch.

A backend session bundles a promptable segmenter and a point tracker behind
one lifecycle.  Sessions are single-client and strictly request/response;
distinct sessions may run in parallel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Protocol, runtime_checkable

import numpy as np

from ..types import BoundingBox, Frame, Mask, PointSet

if TYPE_CHECKING:
    from ..simulator import SceneConfig
    from .oracle import OracleNoise


@dataclass
class SegmentRequest:
    """One segmentation prompt against one frame.

    Exactly one of ``box``, ``point``, ``points`` must be given; coordinates
    are in the frame's own space (which may be a crop/resample sub-frame).
    """

    frame: Frame
    box: BoundingBox | None = None
    point: tuple[float, float] | None = None
    points: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self) -> None:
        given = sum(p is not None for p in (self.box, self.point, self.points))
        if given != 1:
            raise ValueError(f"exactly one prompt variant required, got {given}")
        if self.points is not None:
            if len(self.points) == 0:
                raise ValueError("multi-point prompt needs at least one point")
            self.points = tuple((float(x), float(y)) for x, y in self.points)

    @property
    def prompt_kind(self) -> str:
        if self.box is not None:
            return "box"
        return "point" if self.point is not None else "points"


@dataclass
class TrackRequest:
    """Track query points from the first frame across an ordered chunk."""

    frames: list[Frame]
    query_points: PointSet

    def __post_init__(self) -> None:
        if len(self.frames) < 2:
            raise ValueError("a track request needs at least 2 frames")
        if self.query_points.is_empty:
            raise ValueError("a track request needs at least one query point")
        first = self.frames[0]
        pts = self.query_points.points
        if (pts[:, 0] < 0).any() or (pts[:, 0] > first.width).any() \
                or (pts[:, 1] < 0).any() or (pts[:, 1] > first.height).any():
            raise ValueError("query points must lie within the first frame")


@dataclass
class Trajectory:
    """Per-frame positions and visibility for each query point.

    ``positions`` has shape (L, P, 2) and ``visible`` (L, P); row 0 echoes
    the query points exactly.
    """

    positions: np.ndarray
    visible: np.ndarray

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.visible = np.asarray(self.visible, dtype=bool)
        if self.positions.ndim != 3 or self.positions.shape[2] != 2:
            raise ValueError(f"positions must be (L, P, 2), got {self.positions.shape}")
        if self.visible.shape != self.positions.shape[:2]:
            raise ValueError(
                f"visible shape {self.visible.shape} does not match "
                f"positions {self.positions.shape[:2]}")

    @property
    def num_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def num_points(self) -> int:
        return self.positions.shape[1]


@runtime_checkable
class BackendSession(Protocol):
    """Segmenter + point tracker behind one open session."""

    def segment(self, req: SegmentRequest) -> Mask: ...

    def track(self, req: TrackRequest) -> Trajectory: ...

    def close(self) -> None: ...


@dataclass(frozen=True)
class BackendSpec:
    """How a run names its backend.

    ``kind`` is ``"oracle"`` (in-process, driven by simulator ground truth)
    or ``"external"`` (spawn ``bridge_cmd`` and speak the wire protocol).
    """

    kind: str
    scene: "SceneConfig | None" = None
    noise: "OracleNoise | None" = None
    bridge_cmd: tuple[str, ...] = field(default_factory=tuple)
    session_dir: Path | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("oracle", "external"):
            raise ValueError(f"unknown backend kind {self.kind!r}")


def open_session(spec: BackendSpec) -> BackendSession:
    """Bring up a backend session. Oracle sessions never fail; external
    sessions raise a startup error naming the bridge command."""
    if spec.kind == "oracle":
        from ..simulator import ground_truth
        from .oracle import OracleBackend, OracleNoise

        if spec.scene is None:
            raise ValueError("oracle backend needs a scene config")
        noise = spec.noise if spec.noise is not None else OracleNoise()
        return OracleBackend(ground_truth(spec.scene), noise=noise)
    from .external import ExternalSession

    if not spec.bridge_cmd:
        raise ValueError("external backend needs a bridge command")
    return ExternalSession(spec.bridge_cmd, session_dir=spec.session_dir)


def close_session(session: BackendSession) -> None:
    """Idempotent session teardown."""
    session.close()
