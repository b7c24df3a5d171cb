"""Client session against an external model bridge process.

The bridge is spawned as a subprocess and spoken to over stdin/stdout using
the length-prefixed JSON protocol.  Frames are materialised as PNG files in
a session directory and referenced by relative path, so messages stay small.
"""
from __future__ import annotations

import itertools
import subprocess
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from ..errors import BackendStartupError, ProtocolError, TransportError
from ..raster import rle_decode
from ..types import Frame, Mask
from . import protocol
from .base import SegmentRequest, TrackRequest, Trajectory


def _prompt_payload(req: SegmentRequest) -> dict:
    if req.box is not None:
        b = req.box
        return {"box": [b.x, b.y, b.w, b.h]}
    if req.point is not None:
        return {"point": [float(req.point[0]), float(req.point[1])]}
    return {"points": [[x, y] for x, y in req.points]}


class ExternalSession:
    """One tracked sequence's session with a spawned bridge process."""

    def __init__(self, bridge_cmd: Sequence[str], session_dir: Path | str | None = None,
                 startup_timeout: float = 120.0) -> None:
        self._cmd = tuple(bridge_cmd)
        if session_dir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="orbit-sot-session-")
            self.session_dir = Path(self._tmp.name)
        else:
            self._tmp = None
            self.session_dir = Path(session_dir)
            self.session_dir.mkdir(parents=True, exist_ok=True)
        self._ids = itertools.count(1)
        self._frame_files: dict[tuple, str] = {}
        self._crop_counter = itertools.count(1)
        self._closed = False
        self._stderr_log = open(self.session_dir / "bridge-stderr.log", "wb")
        try:
            self._proc = subprocess.Popen(
                self._cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=self._stderr_log)
        except OSError as exc:
            self._stderr_log.close()
            raise BackendStartupError(
                f"could not spawn bridge {' '.join(self._cmd)!r}: {exc}") from exc
        try:
            protocol.write_message(self._proc.stdin,
                                   protocol.hello(str(self.session_dir)))
            ack = protocol.read_message(self._proc.stdout)
            protocol.expect_hello_ack(ack)
            missing = set(protocol.CAPABILITIES) - set(ack["capabilities"])
            if missing:
                raise ProtocolError(f"bridge lacks capabilities: {sorted(missing)}")
        except (TransportError, ProtocolError, BrokenPipeError) as exc:
            stderr_tail = self._drain_stderr_tail()
            self._terminate()
            raise BackendStartupError(
                f"handshake with bridge {' '.join(self._cmd)!r} failed: {exc}"
                + (f"; bridge stderr: {stderr_tail}" if stderr_tail else "")) from exc

    # -- frame staging ---------------------------------------------------------

    def _frame_key(self, frame: Frame) -> tuple:
        if frame.crop is None or frame.crop.is_identity:
            return (frame.index, None)
        t = frame.crop
        return (frame.index, t.source_box.as_tuple(), t.scale)

    def _stage_frame(self, frame: Frame) -> str:
        """Write the frame PNG into the session directory once; return its
        relative path."""
        key = self._frame_key(frame)
        name = self._frame_files.get(key)
        if name is None:
            if key[1] is None:
                name = f"{frame.index + 1:06d}.png"
            else:
                name = f"{frame.index + 1:06d}_c{next(self._crop_counter)}.png"
            Image.fromarray(frame.pixels).save(self.session_dir / name)
            self._frame_files[key] = name
        return name

    # -- requests ----------------------------------------------------------------

    def _round_trip(self, message: dict, reply_type: str, request_id: int) -> dict:
        if self._closed:
            raise TransportError("session is closed")
        try:
            protocol.write_message(self._proc.stdin, message)
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"bridge pipe broke mid-request: {exc}") from exc
        reply = protocol.read_message(self._proc.stdout)
        return protocol.expect_reply(reply, reply_type, request_id)

    def segment(self, req: SegmentRequest) -> Mask:
        request_id = next(self._ids)
        frame_path = self._stage_frame(req.frame)
        reply = self._round_trip(
            protocol.segment_request(request_id, frame_path, _prompt_payload(req)),
            "mask", request_id)
        protocol.require_fields(reply, "width", "height", "rle")
        if (reply["width"], reply["height"]) != (req.frame.width, req.frame.height):
            raise ProtocolError(
                f"mask is {reply['width']}x{reply['height']} but the frame is "
                f"{req.frame.width}x{req.frame.height}")
        try:
            return rle_decode(reply["rle"], reply["width"], reply["height"])
        except ValueError as exc:
            raise ProtocolError(f"bad mask rle: {exc}") from exc

    def track(self, req: TrackRequest) -> Trajectory:
        request_id = next(self._ids)
        frame_paths = [self._stage_frame(f) for f in req.frames]
        queries = [[float(x), float(y)] for x, y in req.query_points.points]
        reply = self._round_trip(
            protocol.track_request(request_id, frame_paths, queries),
            "trajectory", request_id)
        protocol.require_fields(reply, "positions", "visible")
        positions = np.asarray(reply["positions"], dtype=np.float64)
        visible = np.asarray(reply["visible"], dtype=bool)
        expected = (len(req.frames), len(req.query_points), 2)
        if positions.shape != expected or visible.shape != expected[:2]:
            raise ProtocolError(
                f"trajectory shapes {positions.shape}/{visible.shape} do not "
                f"match request {expected}")
        return Trajectory(positions, visible)

    # -- lifecycle -----------------------------------------------------------------

    def _drain_stderr_tail(self) -> str:
        try:
            self._stderr_log.flush()
            data = (self.session_dir / "bridge-stderr.log").read_bytes()
            return data[-500:].decode("utf-8", errors="replace").strip()
        except OSError:
            return ""

    def _terminate(self) -> None:
        if self._proc.stdin:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        if not self._stderr_log.closed:
            self._stderr_log.close()

    def close(self) -> None:
        """End the session: close the bridge's stdin and reap it. Idempotent."""
        if self._closed:
            return
        self._closed = True
        self._terminate()
        if self._tmp is not None:
            self._tmp.cleanup()
