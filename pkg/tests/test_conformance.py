"""Client-side conformance against the frozen wire-protocol fixture.

The fixture (src/orbit_sot/data/protocol_fixture.json) freezes one complete
exchange — hello/hello_ack, a segment round trip, a track round trip — as
bytes.  replay_bridge.py plays the bridge side, byte-comparing every client
message against the frozen bytes and answering with the frozen replies, so
these tests prove the client session emits exactly the canonical bytes and
understands the canonical replies.  The same fixture is replayed against
bridge implementations from their own test suite.
"""
import io
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from orbit_sot.backends import protocol
from orbit_sot.backends.base import SegmentRequest, TrackRequest
from orbit_sot.backends.external import ExternalSession
from orbit_sot.errors import BackendRequestError
from orbit_sot.raster import rasterize_box, rle_decode, rle_encode
from orbit_sot.types import BoundingBox, Frame, PointSet

from reference import rle_counts_by_hand

REPLAY = Path(__file__).parent / "replay_bridge.py"


@pytest.fixture(scope="module")
def fixture():
    text = (resources.files("orbit_sot.data") / "protocol_fixture.json").read_text()
    return json.loads(text)


@pytest.fixture(scope="module")
def fixture_path():
    return str(resources.files("orbit_sot.data") / "protocol_fixture.json")


def fixture_frames(fixture):
    arrays = []
    for name in sorted(fixture["frames"]):
        png = bytes.fromhex(fixture["frames"][name])
        arrays.append(np.asarray(Image.open(io.BytesIO(png))))
    return arrays


class TestFixtureInternalConsistency:
    def test_messages_rebuild_from_builders(self, fixture):
        """The frozen payloads are exactly what the message builders emit."""
        rle = "18 3 5 3 5 3 5 3 19"
        queries = [[3.5, 4.5], [2.5, 2.5]]
        rebuilt = [
            protocol.hello("fixture-session"),
            protocol.hello_ack(),
            protocol.segment_request(1, "000001.png",
                                     {"box": [2.0, 2.0, 4.0, 3.0]}),
            protocol.mask_reply(1, 8, 8, rle),
            protocol.track_request(2, ["000001.png", "000002.png"], queries),
            protocol.trajectory_reply(2, [queries, queries],
                                      [[True, True], [True, True]]),
        ]
        assert [e["payload"] for e in fixture["exchange"]] == rebuilt

    def test_hex_is_canonical_encoding_of_payload(self, fixture):
        for entry in fixture["exchange"]:
            assert bytes.fromhex(entry["hex"]) == \
                protocol.encode_message(entry["payload"])

    def test_mask_rle_matches_box_raster_and_hand_count(self, fixture):
        """Dual route: frozen rle == rasterised box == by-hand run counts."""
        reply = fixture["exchange"][3]["payload"]
        mask = rle_decode(reply["rle"], reply["width"], reply["height"])
        raster = rasterize_box(BoundingBox(2, 2, 4, 3), 8, 8)
        assert np.array_equal(mask.bits, raster.bits)
        hand = rle_counts_by_hand(raster.bits)
        assert reply["rle"] == " ".join(str(c) for c in hand)
        assert rle_encode(raster) == reply["rle"]

    def test_frames_decode_to_8x8_grayscale(self, fixture):
        arrays = fixture_frames(fixture)
        assert len(arrays) == 2
        for arr in arrays:
            assert arr.shape == (8, 8) and arr.dtype == np.uint8
        # the two frames differ (a track over identical frames proves little)
        assert not np.array_equal(arrays[0], arrays[1])


class TestClientConformance:
    def drive_session(self, fixture, fixture_path, tmp_path):
        arr0, arr1 = fixture_frames(fixture)
        session = ExternalSession(
            [sys.executable, str(REPLAY), fixture_path],
            session_dir=tmp_path / "session")
        try:
            mask = session.segment(SegmentRequest(
                frame=Frame(0, arr0), box=BoundingBox(2.0, 2.0, 4.0, 3.0)))
            traj = session.track(TrackRequest(
                frames=[Frame(0, arr0), Frame(1, arr1)],
                query_points=PointSet(np.array([[3.5, 4.5], [2.5, 2.5]]))))
        finally:
            session.close()
        assert session._proc.returncode == 0, (
            tmp_path / "session" / "bridge-stderr.log").read_text()
        return mask, traj

    def test_full_exchange_is_byte_exact(self, fixture, fixture_path, tmp_path):
        """A real client session replays the fixture without any divergence."""
        mask, traj = self.drive_session(fixture, fixture_path, tmp_path)
        assert np.array_equal(
            mask.bits, rasterize_box(BoundingBox(2, 2, 4, 3), 8, 8).bits)
        assert np.array_equal(
            traj.positions,
            np.array([[[3.5, 4.5], [2.5, 2.5]], [[3.5, 4.5], [2.5, 2.5]]]))
        assert traj.visible.all()

    def test_client_stages_frames_under_fixture_names(self, fixture,
                                                      fixture_path, tmp_path):
        self.drive_session(fixture, fixture_path, tmp_path)
        staged = {p.name for p in (tmp_path / "session").glob("*.png")}
        assert staged == {"000001.png", "000002.png"}

    def test_divergent_request_gets_named_field_diff(self, fixture,
                                                     fixture_path, tmp_path):
        """A client that deviates from the fixture is told which field."""
        arr0, _ = fixture_frames(fixture)
        session = ExternalSession(
            [sys.executable, str(REPLAY), fixture_path],
            session_dir=tmp_path / "session")
        try:
            with pytest.raises(BackendRequestError) as err:
                # wrong prompt box: x is 3.0 where the fixture froze 2.0
                session.segment(SegmentRequest(
                    frame=Frame(0, arr0), box=BoundingBox(3.0, 2.0, 4.0, 3.0)))
            assert "prompt.box[0]" in str(err.value)
            assert "3.0" in str(err.value) and "2.0" in str(err.value)
        finally:
            session.close()
