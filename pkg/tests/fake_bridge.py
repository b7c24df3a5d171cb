"""Scripted protocol counterparty for external-session tests.

Run as ``python3 fake_bridge.py MODE``.  Implements its own framing on
purpose — an independent endpoint, not the package's encoder.  Modes:

ok           handshake, empty-mask segment replies, echo track replies
bad-version  hello_ack carrying protocol version 99
no-track     hello_ack advertising only the segment capability
error-reply  every request answered with an error message
wrong-id     replies carry request id + 1
garbage      valid length header followed by non-JSON bytes
die          exits right after the handshake
huge-header  replies with a length header claiming 1 GiB
"""
import json
import struct
import sys


def read_msg(stream):
    header = stream.read(4)
    if len(header) < 4:
        return None
    (length,) = struct.unpack(">I", header)
    payload = stream.read(length)
    return json.loads(payload.decode("utf-8"))


def write_msg(stream, obj):
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    stream.write(struct.pack(">I", len(payload)) + payload)
    stream.flush()


def frame_size(session_dir, rel_path):
    from PIL import Image

    with Image.open(f"{session_dir}/{rel_path}") as img:
        return img.size  # (width, height)


def main():
    mode = sys.argv[1] if len(sys.argv) > 1 else "ok"
    stdin, stdout = sys.stdin.buffer, sys.stdout.buffer

    hello = read_msg(stdin)
    assert hello["type"] == "hello"
    session_dir = hello["session_dir"]
    version = 99 if mode == "bad-version" else 1
    capabilities = ["segment"] if mode == "no-track" else ["segment", "track"]
    write_msg(stdout, {"type": "hello_ack", "version": version,
                       "capabilities": capabilities})
    if mode == "die":
        return

    while True:
        msg = read_msg(stdin)
        if msg is None:
            return
        rid = msg["id"]
        if mode == "error-reply":
            write_msg(stdout, {"type": "error", "id": rid, "message": "scripted failure"})
            continue
        if mode == "wrong-id":
            write_msg(stdout, {"type": "error", "id": rid + 1, "message": "x"})
            continue
        if mode == "garbage":
            stdout.write(struct.pack(">I", 8) + b"not-json")
            stdout.flush()
            continue
        if mode == "huge-header":
            stdout.write(struct.pack(">I", 1 << 30))
            stdout.flush()
            continue
        if msg["type"] == "segment":
            w, h = frame_size(session_dir, msg["frame"])
            write_msg(stdout, {"type": "mask", "id": rid, "width": w, "height": h,
                               "rle": str(w * h)})
        elif msg["type"] == "track":
            queries = msg["query_points"]
            n_frames = len(msg["frames"])
            write_msg(stdout, {
                "type": "trajectory", "id": rid,
                "positions": [queries for _ in range(n_frames)],
                "visible": [[True] * len(queries) for _ in range(n_frames)],
            })
        else:
            write_msg(stdout, {"type": "error", "id": rid,
                               "message": f"unknown type {msg['type']}"})


if __name__ == "__main__":
    main()
