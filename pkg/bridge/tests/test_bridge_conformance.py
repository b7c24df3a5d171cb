"""Byte-exact conformance of the stub bridge against the frozen protocol
fixture.

The fixture (shipped with the tracker package as ``orbit_sot.data``) records
one full session — hello, segment, track — as framed bytes.  The client
messages are fed to a real bridge subprocess verbatim (only hello's
session_dir is rewritten to a temp directory holding the fixture's frames),
and every bridge reply must match the recorded bytes exactly.  A mismatch is
reported field by field, not as a blob diff.

Two more subprocess cases pin the error policy: a malformed JSON payload
draws an error reply and the session continues; a corrupted length prefix
draws an error reply and the bridge exits instead of hanging.
"""

import importlib.resources
import json
import os
import select
import struct
import subprocess
import sys
import time

import pytest

from orbit_sot_bridge import wire

BRIDGE_CMD = [sys.executable, "-m", "orbit_sot_bridge.cli", "--stub"]
HEADER = struct.Struct(">I")


@pytest.fixture(scope="module")
def fixture():
    text = (
        importlib.resources.files("orbit_sot.data")
        .joinpath("protocol_fixture.json")
        .read_text(encoding="utf-8")
    )
    data = json.loads(text)
    assert data["format"].startswith("orbit-sot protocol conformance fixture")
    return data


@pytest.fixture
def session_dir(fixture, tmp_path):
    for name, png_hex in fixture["frames"].items():
        (tmp_path / name).write_bytes(bytes.fromhex(png_hex))
    return tmp_path


@pytest.fixture
def bridge(tmp_path):
    proc = subprocess.Popen(
        BRIDGE_CMD,
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        bufsize=0,
    )
    yield proc
    if proc.poll() is None:
        proc.kill()
    proc.wait()
    for stream in (proc.stdin, proc.stdout, proc.stderr):
        if stream:
            stream.close()


def read_exact(proc, n, timeout=20.0):
    """Read exactly n bytes from the bridge's stdout without risking a hang."""
    fd = proc.stdout.fileno()
    data = b""
    deadline = time.monotonic() + timeout
    while len(data) < n:
        remaining = deadline - time.monotonic()
        assert remaining > 0, (
            f"timed out waiting for {n} reply bytes (got {len(data)})"
        )
        ready, _, _ = select.select([fd], [], [], remaining)
        assert ready, f"timed out waiting for {n} reply bytes (got {len(data)})"
        chunk = os.read(fd, n - len(data))
        assert chunk, f"bridge closed its stdout after {len(data)} of {n} bytes"
        data += chunk
    return data


def read_reply_bytes(proc):
    header = read_exact(proc, HEADER.size)
    (length,) = HEADER.unpack(header)
    assert length <= wire.MAX_MESSAGE_BYTES, f"insane reply length {length}"
    return header + read_exact(proc, length)


def field_diffs(got, want, prefix=""):
    """Named per-field differences between two decoded payloads."""
    if isinstance(got, dict) and isinstance(want, dict):
        diffs = []
        for key in sorted(set(got) | set(want)):
            path = f"{prefix}.{key}" if prefix else key
            if key not in got:
                diffs.append(f"{path}: missing (fixture has {want[key]!r})")
            elif key not in want:
                diffs.append(f"{path}: unexpected field {got[key]!r}")
            else:
                diffs.extend(field_diffs(got[key], want[key], path))
        return diffs
    if isinstance(got, list) and isinstance(want, list):
        diffs = []
        if len(got) != len(want):
            diffs.append(
                f"{prefix}: length {len(got)}, fixture has {len(want)}"
            )
        for i in range(min(len(got), len(want))):
            diffs.extend(field_diffs(got[i], want[i], f"{prefix}[{i}]"))
        return diffs
    if got != want or type(got) is not type(want):
        return [f"{prefix}: got {got!r}, fixture has {want!r}"]
    return []


def describe_divergence(got_bytes, want_bytes):
    got = json.loads(got_bytes[HEADER.size:].decode("utf-8"))
    want = json.loads(want_bytes[HEADER.size:].decode("utf-8"))
    diffs = field_diffs(got, want) or ["(payloads equal; framing bytes differ)"]
    return "\n  ".join(diffs)


def send_hello(proc, fixture, session_dir):
    """Send the fixture's hello with session_dir rewritten to a real path."""
    hello_entry = fixture["exchange"][0]
    assert hello_entry["from"] == "client"
    assert hello_entry["payload"]["type"] == "hello"
    payload = dict(hello_entry["payload"], session_dir=str(session_dir))
    proc.stdin.write(wire.encode(payload))
    proc.stdin.flush()


class TestFixtureReplay:
    def test_every_reply_is_byte_identical(self, fixture, session_dir, bridge):
        for entry in fixture["exchange"]:
            payload = entry["payload"]
            if entry["from"] == "client":
                if payload["type"] == "hello":
                    send_hello(bridge, fixture, session_dir)
                else:
                    bridge.stdin.write(bytes.fromhex(entry["hex"]))
                    bridge.stdin.flush()
            else:
                want = bytes.fromhex(entry["hex"])
                got = read_reply_bytes(bridge)
                assert got == want, (
                    f"bridge reply diverges from fixture "
                    f"({payload['type']}, id {payload.get('id')}):\n  "
                    + describe_divergence(got, want)
                )
        bridge.stdin.close()
        assert bridge.wait(timeout=20) == 0

    def test_hello_ack_does_not_depend_on_session_dir(
        self, fixture, session_dir, bridge
    ):
        # The ack is the one reply a client sees before trusting the bridge;
        # it must be stable whatever directory the session uses.
        send_hello(bridge, fixture, session_dir)
        ack_entry = fixture["exchange"][1]
        assert ack_entry["from"] == "bridge"
        assert read_reply_bytes(bridge) == bytes.fromhex(ack_entry["hex"])


class TestErrorPolicy:
    def test_malformed_payload_draws_error_then_serving_continues(
        self, fixture, session_dir, bridge
    ):
        send_hello(bridge, fixture, session_dir)
        read_reply_bytes(bridge)  # hello_ack
        garbage = b"{broken json"
        bridge.stdin.write(HEADER.pack(len(garbage)) + garbage)
        bridge.stdin.flush()
        error = json.loads(read_reply_bytes(bridge)[HEADER.size:])
        assert error["type"] == "error"
        assert error["id"] is None
        # The recorded segment request must still be served byte-exactly.
        segment_entry = fixture["exchange"][2]
        assert segment_entry["payload"]["type"] == "segment"
        bridge.stdin.write(bytes.fromhex(segment_entry["hex"]))
        bridge.stdin.flush()
        mask_entry = fixture["exchange"][3]
        got = read_reply_bytes(bridge)
        want = bytes.fromhex(mask_entry["hex"])
        assert got == want, describe_divergence(got, want)
        bridge.stdin.close()
        assert bridge.wait(timeout=20) == 0

    def test_corrupted_length_prefix_draws_error_and_exit(
        self, fixture, session_dir, bridge
    ):
        send_hello(bridge, fixture, session_dir)
        read_reply_bytes(bridge)  # hello_ack
        bridge.stdin.write(HEADER.pack(0xFFFFFFFF))
        bridge.stdin.flush()
        error = json.loads(read_reply_bytes(bridge)[HEADER.size:])
        assert error["type"] == "error"
        assert "limit" in error["message"]
        assert bridge.wait(timeout=20) == 1
