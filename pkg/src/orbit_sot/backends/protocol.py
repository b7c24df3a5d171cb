"""Length-prefixed JSON wire protocol between the tracker and a model bridge.

Every message is a 4-byte big-endian unsigned length followed by UTF-8 JSON
of exactly that length.  Encoding is canonical — sorted keys, no whitespace —
so identical payloads are identical bytes, which the conformance fixture
relies on.

Session shape: the client opens with ``hello`` (protocol version + session
directory), the bridge answers ``hello_ack`` (version + capabilities), then
the client issues ``segment``/``track`` requests with strictly increasing
integer ids and the bridge answers each with a ``mask``/``trajectory`` reply
(or ``error``) carrying the same id.  Frames travel as file paths relative
to the session directory, never inline.
"""
from __future__ import annotations

import json
import struct
from typing import BinaryIO

from ..errors import BackendRequestError, ProtocolError, TransportError

PROTOCOL_VERSION = 1
CAPABILITIES = ("segment", "track")
HEADER = struct.Struct(">I")
MAX_MESSAGE_BYTES = 16 * 1024 * 1024


def encode_payload(message: dict) -> bytes:
    """Canonical JSON bytes for a message (no framing header)."""
    return json.dumps(message, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_message(message: dict) -> bytes:
    """Framed bytes: length header plus canonical JSON payload."""
    payload = encode_payload(message)
    if len(payload) > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"message of {len(payload)} bytes exceeds the "
                            f"{MAX_MESSAGE_BYTES}-byte limit")
    return HEADER.pack(len(payload)) + payload


def write_message(stream: BinaryIO, message: dict) -> None:
    stream.write(encode_message(message))
    stream.flush()


def _read_exact(stream: BinaryIO, n: int) -> bytes | None:
    """Read exactly n bytes; None on clean EOF at a message boundary."""
    data = b""
    while len(data) < n:
        chunk = stream.read(n - len(data))
        if not chunk:
            if not data:
                return None
            raise TransportError(
                f"stream ended mid-message: got {len(data)} of {n} bytes")
        data += chunk
    return data


def read_message(stream: BinaryIO) -> dict | None:
    """Next message from the stream; None on clean end-of-stream."""
    header = _read_exact(stream, HEADER.size)
    if header is None:
        return None
    (length,) = HEADER.unpack(header)
    if length > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"declared length {length} exceeds the "
                            f"{MAX_MESSAGE_BYTES}-byte limit")
    payload = _read_exact(stream, length)
    if payload is None:
        raise TransportError("stream ended after a message header")
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable message payload: {exc}") from exc
    if not isinstance(message, dict):
        raise ProtocolError(f"message must be a JSON object, got {type(message).__name__}")
    return message


# message builders -----------------------------------------------------------

def hello(session_dir: str) -> dict:
    return {"type": "hello", "version": PROTOCOL_VERSION, "session_dir": session_dir}


def hello_ack(capabilities: tuple[str, ...] = CAPABILITIES) -> dict:
    return {"type": "hello_ack", "version": PROTOCOL_VERSION,
            "capabilities": list(capabilities)}


def segment_request(request_id: int, frame_path: str, prompt: dict) -> dict:
    return {"type": "segment", "id": request_id, "frame": frame_path, "prompt": prompt}


def mask_reply(request_id: int, width: int, height: int, rle: str) -> dict:
    return {"type": "mask", "id": request_id, "width": width, "height": height,
            "rle": rle}


def track_request(request_id: int, frame_paths: list[str],
                  query_points: list[list[float]]) -> dict:
    return {"type": "track", "id": request_id, "frames": frame_paths,
            "query_points": query_points}


def trajectory_reply(request_id: int, positions: list[list[list[float]]],
                     visible: list[list[bool]]) -> dict:
    return {"type": "trajectory", "id": request_id, "positions": positions,
            "visible": visible}


def error_reply(request_id: int, message: str) -> dict:
    return {"type": "error", "id": request_id, "message": message}


# validators ------------------------------------------------------------------

def check_version(message: dict) -> None:
    version = message.get("version")
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"protocol version mismatch: peer speaks "
                            f"{version!r}, this side speaks {PROTOCOL_VERSION}")


def require_fields(message: dict, *names: str) -> None:
    missing = [n for n in names if n not in message]
    if missing:
        kind = message.get("type", "<untyped>")
        raise ProtocolError(f"{kind} message missing fields: {missing}")


def expect_hello_ack(message: dict | None) -> dict:
    if message is None:
        raise TransportError("bridge closed the stream before hello_ack")
    if message.get("type") != "hello_ack":
        raise ProtocolError(f"expected hello_ack, got {message.get('type')!r}")
    check_version(message)
    require_fields(message, "capabilities")
    return message


def expect_reply(message: dict | None, expected_type: str, expected_id: int) -> dict:
    """Validate a request's reply; raises on errors, mismatched id or type."""
    if message is None:
        raise TransportError("bridge closed the stream before replying")
    got_id = message.get("id")
    if got_id != expected_id:
        raise ProtocolError(f"reply id {got_id!r} does not match request id "
                            f"{expected_id}")
    kind = message.get("type")
    if kind == "error":
        raise BackendRequestError(str(message.get("message", "unspecified error")))
    if kind != expected_type:
        raise ProtocolError(f"expected a {expected_type} reply, got {kind!r}")
    return message
