"""Length-prefixed JSON framing for the bridge's stdio channel.

Every message is a 4-byte big-endian unsigned length followed by exactly
that many bytes of UTF-8 JSON, encoded canonically (keys sorted, no
whitespace) so that a given payload has exactly one byte representation.

Two failure modes are kept distinct because they demand different
recoveries.  A payload that frames correctly but does not parse as a JSON
object (:class:`PayloadError`) leaves the stream positioned at the next
header, so the server can answer with an error and keep serving.  A broken
frame itself (:class:`FramingError`: truncated header or body, or a length
over the message cap) leaves no way to find the next message boundary, so
the connection cannot continue.
"""

from __future__ import annotations

import json
import struct
from typing import Any, BinaryIO

HEADER = struct.Struct(">I")
MAX_MESSAGE_BYTES = 16 * 1024 * 1024


class WireError(Exception):
    """Base class for protocol channel failures."""


class FramingError(WireError):
    """The byte stream lost message framing and cannot be resynchronised."""


class PayloadError(WireError):
    """A well-framed payload was not a valid JSON object."""


def encode(message: dict[str, Any]) -> bytes:
    """Serialise a message to its canonical framed byte representation."""
    payload = json.dumps(
        message, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    if len(payload) > MAX_MESSAGE_BYTES:
        raise FramingError(
            f"message of {len(payload)} bytes exceeds the "
            f"{MAX_MESSAGE_BYTES}-byte limit"
        )
    return HEADER.pack(len(payload)) + payload


def write_message(stream: BinaryIO, message: dict[str, Any]) -> None:
    stream.write(encode(message))
    stream.flush()


def _read_exact(stream: BinaryIO, n: int) -> bytes | None:
    """Read exactly ``n`` bytes; None on clean EOF at a message boundary."""
    chunks: list[bytes] = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            if chunks:
                got = n - remaining
                raise FramingError(f"stream truncated: expected {n} bytes, got {got}")
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(stream: BinaryIO) -> dict[str, Any] | None:
    """Read one framed message; None on clean EOF before a header.

    Raises :class:`FramingError` when the frame itself is unusable and
    :class:`PayloadError` when the frame was fine but the payload is not a
    JSON object.
    """
    header = _read_exact(stream, HEADER.size)
    if header is None:
        return None
    (length,) = HEADER.unpack(header)
    if length > MAX_MESSAGE_BYTES:
        raise FramingError(
            f"declared payload of {length} bytes exceeds the "
            f"{MAX_MESSAGE_BYTES}-byte limit"
        )
    payload = _read_exact(stream, length)
    if payload is None:
        raise FramingError(f"stream truncated: expected {length} payload bytes, got 0")
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PayloadError(f"payload is not valid JSON: {exc}") from exc
    if not isinstance(message, dict):
        raise PayloadError(
            f"payload must be a JSON object, got {type(message).__name__}"
        )
    return message
