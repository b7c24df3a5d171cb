"""The bridge's request loop: handshake, dispatch, and error policy.

Lifecycle: read ``hello`` (client's protocol version and session directory),
load the model backend, answer ``hello_ack``, then serve ``segment`` and
``track`` requests one at a time until stdin closes.

Error policy, from least to most severe:

* A request that cannot be served (unknown type, bad fields, missing frame
  file, non-increasing id) gets an ``error`` reply echoing its id, and the
  loop continues — one bad request must not kill the session.
* A well-framed payload that is not valid JSON gets an ``error`` reply with
  a null id and the loop continues: the framing still told us where the
  next message starts.
* A broken frame (truncated stream, length prefix over the 16 MiB cap)
  gets a final ``error`` reply and the bridge exits 1 — with framing gone
  there is no way to locate the next message boundary.
* A model-loading failure is answered with an ``error`` reply instead of
  ``hello_ack`` and the bridge exits 3, so supervisors can tell missing
  weights apart from protocol trouble.
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np
from PIL import Image

from . import wire
from .models import BridgeConfig, Models, ModelLoadError, RequestError, rle_encode

PROTOCOL_VERSION = 1
CAPABILITIES = ["segment", "track"]

EXIT_OK = 0
EXIT_PROTOCOL = 1
EXIT_MODEL_LOAD = 3


def _error(request_id: Any, message: str) -> dict[str, Any]:
    return {"type": "error", "id": request_id, "message": message}


def _load_frame(session_dir: Path, rel_path: Any) -> np.ndarray:
    if not isinstance(rel_path, str) or not rel_path:
        raise RequestError(f"frame path must be a non-empty string, got {rel_path!r}")
    path = session_dir / rel_path
    try:
        with Image.open(path) as img:
            return np.asarray(img)
    except (OSError, ValueError) as exc:
        raise RequestError(f"cannot read frame {rel_path!r}: {exc}") from exc


def _require(message: dict[str, Any], *fields: str) -> None:
    missing = [f for f in fields if f not in message]
    if missing:
        raise RequestError(
            f"{message.get('type', '<untyped>')} request missing fields: {missing}"
        )


def _handle_segment(
    message: dict[str, Any], session_dir: Path, models: Models
) -> dict[str, Any]:
    _require(message, "frame", "prompt")
    prompt = message["prompt"]
    if not isinstance(prompt, dict):
        raise RequestError(f"prompt must be an object, got {type(prompt).__name__}")
    image = _load_frame(session_dir, message["frame"])
    mask = models.segment(image, prompt)
    height, width = image.shape[:2]
    return {
        "type": "mask",
        "id": message["id"],
        "width": width,
        "height": height,
        "rle": rle_encode(mask),
    }


def _handle_track(
    message: dict[str, Any], session_dir: Path, models: Models
) -> dict[str, Any]:
    _require(message, "frames", "query_points")
    frames = message["frames"]
    queries = message["query_points"]
    if not isinstance(frames, list) or not frames:
        raise RequestError("frames must be a non-empty list of paths")
    if not isinstance(queries, list) or not queries:
        raise RequestError("query_points must be a non-empty list of [x, y] pairs")
    for q in queries:
        if not isinstance(q, list) or len(q) != 2:
            raise RequestError(f"query point must be an [x, y] pair, got {q!r}")
    images = [_load_frame(session_dir, p) for p in frames]
    positions, visible = models.track(images, queries)
    return {
        "type": "trajectory",
        "id": message["id"],
        "positions": positions,
        "visible": visible,
    }


def serve(inp: BinaryIO, out: BinaryIO, config: BridgeConfig) -> int:
    """Run one bridge session over the given byte streams; returns exit code."""
    try:
        hello = wire.read_message(inp)
    except wire.WireError as exc:
        wire.write_message(out, _error(None, f"unreadable hello: {exc}"))
        return EXIT_PROTOCOL
    if hello is None:
        return EXIT_OK
    if hello.get("type") != "hello":
        wire.write_message(
            out, _error(None, f"expected hello, got {hello.get('type')!r}")
        )
        return EXIT_PROTOCOL
    if hello.get("version") != PROTOCOL_VERSION:
        wire.write_message(
            out,
            _error(
                None,
                f"protocol version mismatch: client speaks "
                f"{hello.get('version')!r}, bridge speaks {PROTOCOL_VERSION}",
            ),
        )
        return EXIT_PROTOCOL
    session_dir_field = hello.get("session_dir")
    if not isinstance(session_dir_field, str) or not session_dir_field:
        wire.write_message(out, _error(None, "hello carries no usable session_dir"))
        return EXIT_PROTOCOL
    config = dataclasses.replace(config, session_dir=Path(session_dir_field))
    session_dir = config.session_dir

    try:
        models = config.load_models()
    except ModelLoadError as exc:
        wire.write_message(out, _error(None, f"model load failed: {exc}"))
        return EXIT_MODEL_LOAD

    wire.write_message(
        out,
        {
            "type": "hello_ack",
            "version": PROTOCOL_VERSION,
            "capabilities": CAPABILITIES,
        },
    )

    last_id: int | None = None
    while True:
        try:
            message = wire.read_message(inp)
        except wire.PayloadError as exc:
            wire.write_message(out, _error(None, str(exc)))
            continue
        except wire.FramingError as exc:
            wire.write_message(out, _error(None, str(exc)))
            return EXIT_PROTOCOL
        if message is None:
            return EXIT_OK

        request_id = message.get("id")
        try:
            if not isinstance(request_id, int) or isinstance(request_id, bool):
                raise RequestError(
                    f"request id must be an integer, got {request_id!r}"
                )
            if last_id is not None and request_id <= last_id:
                raise RequestError(
                    f"request ids must increase: got {request_id} after {last_id}"
                )
            kind = message.get("type")
            if kind == "segment":
                reply = _handle_segment(message, session_dir, models)
            elif kind == "track":
                reply = _handle_track(message, session_dir, models)
            else:
                raise RequestError(f"unsupported request type: {kind!r}")
        except RequestError as exc:
            wire.write_message(out, _error(request_id, str(exc)))
            if isinstance(request_id, int) and not isinstance(request_id, bool):
                last_id = request_id
            continue
        except Exception as exc:  # defensive: a model bug must not hang the client
            print(f"bridge: internal error on request {request_id}: {exc}",
                  file=sys.stderr, flush=True)
            wire.write_message(out, _error(request_id, f"internal error: {exc}"))
            if isinstance(request_id, int) and not isinstance(request_id, bool):
                last_id = request_id
            continue

        last_id = request_id
        wire.write_message(out, reply)
