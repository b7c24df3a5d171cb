"""Core raster/geometry kernels against naive reference implementations."""
from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as npst

import reference
from orbit_sot.errors import EmptyMaskError, NoConsensusError
from orbit_sot.raster import (
    aggregate_heatmap,
    apply_crop,
    bbox_from_mask,
    bbox_from_points,
    center_distance,
    consensus_region,
    crop_resample,
    crop_transform_for,
    erode_mask,
    iou,
    mask_to_original,
    rasterize_box,
    rle_decode,
    rle_encode,
    sample_points,
)
from orbit_sot.types import BoundingBox, Frame, Heatmap, Mask, PipelineConfig, PointSet

# strategy helpers ----------------------------------------------------------

# boxes on a 1/8-px grid: every coordinate is exactly representable in binary
# floating point, so half-open coverage comparisons have no rounding knife-edges
eighth = st.integers(min_value=-40, max_value=200).map(lambda k: k / 8.0)
positive_eighth = st.integers(min_value=1, max_value=160).map(lambda k: k / 8.0)
box_strategy = st.builds(BoundingBox, eighth, eighth, positive_eighth, positive_eighth)

int_box_strategy = st.builds(
    BoundingBox,
    st.integers(-20, 50).map(float),
    st.integers(-20, 50).map(float),
    st.integers(1, 40).map(float),
    st.integers(1, 40).map(float),
)


def mask_strategy(max_dim: int = 64):
    return npst.arrays(
        dtype=bool,
        shape=st.tuples(st.integers(1, max_dim), st.integers(1, max_dim)),
    ).map(Mask)


class TestIou:
    def test_identical_boxes(self):
        a = BoundingBox(0, 0, 10, 10)
        assert iou(a, a) == 1.0

    def test_disjoint_boxes(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 5, 5)) == 0.0

    def test_half_offset_overlap(self):
        a = BoundingBox(0, 0, 10, 10)
        b = BoundingBox(5, 0, 10, 10)
        expected = reference.iou_pixel_count((0, 0, 10, 10), (5, 0, 10, 10))
        assert expected == pytest.approx(1 / 3, abs=1e-12)
        assert iou(a, b) == pytest.approx(expected, abs=1e-9)

    def test_touching_edges_are_disjoint(self):
        assert iou(BoundingBox(0, 0, 5, 5), BoundingBox(5, 0, 5, 5)) == 0.0

    @given(a=int_box_strategy, b=int_box_strategy)
    def test_matches_pixel_counting_on_integer_boxes(self, a, b):
        expected = reference.iou_pixel_count(a.as_tuple(), b.as_tuple())
        assert iou(a, b) == pytest.approx(expected, abs=1e-9)

    @given(a=box_strategy, b=box_strategy)
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0
        assert iou(a, a) == pytest.approx(1.0, abs=1e-12)


class TestCenterDistance:
    def test_identical_boxes(self):
        a = BoundingBox(2, 3, 4, 6)
        assert center_distance(a, a) == 0.0

    def test_three_four_five(self):
        a = BoundingBox(-1, -1, 2, 2)  # centre (0, 0)
        b = BoundingBox(2, 3, 2, 2)  # centre (3, 4)
        assert reference.center_distance_direct(a.as_tuple(), b.as_tuple()) == 5.0
        assert center_distance(a, b) == pytest.approx(5.0, abs=1e-12)

    def test_vertical_offset(self):
        a = BoundingBox(0, 0, 2, 2)  # centre (1, 1)
        b = BoundingBox(0, 5, 2, 2)  # centre (1, 6)
        assert reference.center_distance_direct(a.as_tuple(), b.as_tuple()) == 5.0
        assert center_distance(a, b) == pytest.approx(5.0, abs=1e-12)

    @given(a=box_strategy, b=box_strategy)
    def test_matches_direct_arithmetic(self, a, b):
        expected = reference.center_distance_direct(a.as_tuple(), b.as_tuple())
        assert center_distance(a, b) == pytest.approx(expected, abs=1e-9)


class TestAggregateHeatmap:
    def test_empty_list_gives_zero_heatmap(self):
        h = aggregate_heatmap([], shape=(4, 6))
        assert h.counts.shape == (4, 6)
        assert not h.counts.any()

    def test_empty_list_without_shape_rejected(self):
        with pytest.raises(ValueError):
            aggregate_heatmap([])

    def test_single_mask_is_indicator(self):
        bits = np.zeros((5, 5), dtype=bool)
        bits[1:3, 2:4] = True
        h = aggregate_heatmap([Mask(bits)])
        assert (h.counts == bits.astype(np.int32)).all()

    def test_two_masks_overlap_column(self):
        first = np.zeros((4, 4), dtype=bool)
        first[:, 0:3] = True
        second = np.zeros((4, 4), dtype=bool)
        second[:, 2:4] = True
        expected = reference.heatmap_count([first, second])
        assert (expected[:, 2] == 2).all()
        assert expected.max() == 2
        h = aggregate_heatmap([Mask(first), Mask(second)])
        assert (h.counts == expected).all()

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            aggregate_heatmap([Mask.zeros(4, 4), Mask.zeros(5, 4)])

    @given(
        masks=st.lists(
            npst.arrays(dtype=bool, shape=(8, 9)), min_size=1, max_size=10
        )
    )
    def test_matches_naive_counting(self, masks):
        expected = reference.heatmap_count(masks)
        h = aggregate_heatmap([Mask(m) for m in masks])
        assert (h.counts == expected).all()


class TestConsensusRegion:
    def test_single_mask_first_component(self):
        bits = np.zeros((5, 5), dtype=bool)
        bits[0, 0:2] = True  # component containing the first set pixel
        bits[3, 3] = True  # separate component
        res = consensus_region(aggregate_heatmap([Mask(bits)]))
        assert (res.peak_row, res.peak_col) == (0, 0)
        assert res.peak_count == 1
        expected = np.zeros((5, 5), dtype=bool)
        expected[0, 0:2] = True
        assert (res.region.bits == expected).all()

    def test_uniform_counts_tie_break(self):
        res = consensus_region(Heatmap(np.full((3, 4), 2, dtype=np.int32)))
        assert (res.peak_row, res.peak_col) == (0, 0)
        assert res.peak_count == 2
        assert res.region.bits.all()

    def test_tie_break_smallest_row_then_column(self):
        counts = np.zeros((4, 6), dtype=np.int32)
        counts[2, 3] = 7
        counts[1, 5] = 7
        res = consensus_region(Heatmap(counts))
        assert (res.peak_row, res.peak_col) == (1, 5)
        counts2 = np.zeros((4, 6), dtype=np.int32)
        counts2[1, 4] = 7
        counts2[1, 2] = 7
        res2 = consensus_region(Heatmap(counts2))
        assert (res2.peak_row, res2.peak_col) == (1, 2)

    def test_three_masks_core_with_fringes(self):
        core = np.zeros((4, 4), dtype=bool)
        core[1:3, 1:3] = True
        m1, m2, m3 = core.copy(), core.copy(), core.copy()
        m1[0, 1] = True
        m2[1, 0] = True
        m3[3, 2] = True
        peak_row, peak_col, peak_count, region = reference.consensus_flood_fill(
            reference.heatmap_count([m1, m2, m3])
        )
        assert (peak_row, peak_col, peak_count) == (1, 1, 3)
        assert (region == core).all()  # ceil(3/2)=2 excludes the 1-count fringes
        res = consensus_region(aggregate_heatmap([Mask(m1), Mask(m2), Mask(m3)]))
        assert (res.peak_row, res.peak_col, res.peak_count) == (1, 1, 3)
        assert (res.region.bits == core).all()

    def test_all_zero_signals_no_consensus(self):
        with pytest.raises(NoConsensusError):
            consensus_region(Heatmap(np.zeros((4, 4), dtype=np.int32)))

    @settings(max_examples=200)
    @given(
        counts=npst.arrays(
            dtype=np.int32,
            shape=st.tuples(st.integers(1, 16), st.integers(1, 16)),
            elements=st.integers(0, 5),
        )
    )
    def test_matches_flood_fill_oracle(self, counts):
        if counts.max() == 0:
            with pytest.raises(NoConsensusError):
                consensus_region(Heatmap(counts))
            return
        pr, pc, count, region = reference.consensus_flood_fill(counts)
        res = consensus_region(Heatmap(counts))
        assert (res.peak_row, res.peak_col, res.peak_count) == (pr, pc, count)
        assert (res.region.bits == region).all()
        threshold = -(-count // 2)
        assert (counts[res.region.bits] >= threshold).all()
        assert res.region.bits[res.peak_row, res.peak_col]


class TestBboxFromMask:
    def test_single_bit(self):
        bits = np.zeros((10, 10), dtype=bool)
        bits[7, 3] = True  # x=3, y=7
        assert bbox_from_mask(Mask(bits)).as_tuple() == (3.0, 7.0, 1.0, 1.0)

    def test_full_mask(self):
        assert bbox_from_mask(Mask(np.ones((5, 5), dtype=bool))).as_tuple() == (0.0, 0.0, 5.0, 5.0)

    def test_two_corner_bits(self):
        bits = np.zeros((6, 6), dtype=bool)
        bits[1, 1] = True  # (x=1, y=1)
        bits[2, 4] = True  # (x=4, y=2)
        assert reference.bbox_scan(bits) == (1, 1, 4, 2)
        assert bbox_from_mask(Mask(bits)).as_tuple() == (1.0, 1.0, 4.0, 2.0)

    def test_empty_mask_rejected(self):
        with pytest.raises(EmptyMaskError):
            bbox_from_mask(Mask.zeros(4, 4))

    @given(bits=npst.arrays(dtype=bool, shape=(12, 17)))
    def test_matches_scan_oracle(self, bits):
        if not bits.any():
            with pytest.raises(EmptyMaskError):
                bbox_from_mask(Mask(bits))
            return
        assert bbox_from_mask(Mask(bits)).as_tuple() == tuple(
            float(v) for v in reference.bbox_scan(bits)
        )


class TestBboxFromPoints:
    def test_single_point_expands_symmetrically(self):
        ps = PointSet(np.array([[5.0, 5.0]]))
        assert bbox_from_points(ps, min_dim=4).as_tuple() == (3.0, 3.0, 4.0, 4.0)

    def test_spread_points_stay_tight(self):
        ps = PointSet(np.array([[0.0, 0.0], [10.0, 10.0]]))
        assert bbox_from_points(ps, min_dim=1).as_tuple() == (0.0, 0.0, 10.0, 10.0)

    def test_identical_points(self):
        ps = PointSet(np.array([[4.0, 9.0]] * 3))
        box = bbox_from_points(ps, min_dim=2)
        assert box.as_tuple() == (3.0, 8.0, 2.0, 2.0)
        assert box.center == (4.0, 9.0)

    def test_one_thin_dimension_expanded(self):
        ps = PointSet(np.array([[0.0, 0.0], [10.0, 1.0]]))
        box = bbox_from_points(ps, min_dim=4)
        assert box.as_tuple() == (0.0, -1.5, 10.0, 4.0)

    def test_empty_rejected(self):
        with pytest.raises(EmptyMaskError):
            bbox_from_points(PointSet(np.empty((0, 2))), min_dim=2)


class TestRasterizeBox:
    def test_integer_box(self):
        m = rasterize_box(BoundingBox(2, 1, 3, 2), width=8, height=6)
        expected = np.zeros((6, 8), dtype=bool)
        expected[1:3, 2:5] = True
        assert (m.bits == expected).all()

    def test_clamps_to_frame(self):
        m = rasterize_box(BoundingBox(-5, -5, 100, 100), width=4, height=3)
        assert m.bits.all()

    def test_fully_outside_is_empty(self):
        assert rasterize_box(BoundingBox(50, 50, 3, 3), width=10, height=10).is_empty

    @given(box=box_strategy, width=st.integers(1, 24), height=st.integers(1, 24))
    def test_center_inside_semantics(self, box, width, height):
        m = rasterize_box(box, width, height)
        for i in range(height):
            for j in range(width):
                cx, cy = j + 0.5, i + 0.5
                inside = box.x <= cx < box.x2 and box.y <= cy < box.y2
                assert m.bits[i, j] == inside


def make_frame(width: int = 160, height: int = 120, seed: int = 0) -> Frame:
    rng = np.random.default_rng(seed)
    return Frame(index=0, pixels=rng.integers(0, 256, (height, width), dtype=np.uint8))


class TestCropResample:
    cfg = PipelineConfig()

    def test_large_object_passes_through(self):
        frame = make_frame()
        box = BoundingBox(10, 10, 40, 40)
        sub, t = crop_resample(frame, box, self.cfg)
        assert t.is_identity
        assert sub is frame

    def test_small_object_scale_factor(self):
        frame = make_frame()
        box = BoundingBox(50, 40, 8, 8)
        sub, t = crop_resample(frame, box, self.cfg)
        assert t.scale == 4.0
        # context window: 8x8 box grown 4x about its centre, snapped to pixels
        assert t.source_box.as_tuple() == (38.0, 28.0, 32.0, 32.0)
        assert (sub.width, sub.height) == (128, 128)
        assert sub.crop is t
        assert sub.index == frame.index

    def test_fractional_scale(self):
        t = crop_transform_for(BoundingBox(60, 50, 10, 12), 160, 120, self.cfg)
        assert t.scale == pytest.approx(3.2)

    def test_window_clamped_to_frame(self):
        frame = make_frame()
        box = BoundingBox(1, 1, 6, 6)  # context window would start at -8
        sub, t = crop_resample(frame, box, self.cfg)
        assert t.source_box.x == 0.0 and t.source_box.y == 0.0

    def test_window_outside_frame_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            crop_transform_for(BoundingBox(-100, -100, 4, 4), 160, 120, self.cfg)

    def test_round_trip_thousand_points(self):
        frame = make_frame()
        _, t = crop_resample(frame, BoundingBox(50, 40, 8, 6), self.cfg)
        rng = np.random.default_rng(1)
        pts = np.stack(
            [
                rng.uniform(t.source_box.x, t.source_box.x2, 1000),
                rng.uniform(t.source_box.y, t.source_box.y2, 1000),
            ],
            axis=1,
        )
        back = t.to_original(t.to_crop(pts))
        assert np.abs(back - pts).max() < 1e-6

    @given(
        bx=st.integers(4, 100),
        by=st.integers(4, 60),
        bw=st.integers(2, 31),
        bh=st.integers(2, 31),
    )
    def test_round_trip_any_produced_transform(self, bx, by, bw, bh):
        t = crop_transform_for(BoundingBox(bx, by, bw, bh), 160, 120, self.cfg)
        pts = np.array(
            [
                [t.source_box.x, t.source_box.y],
                [t.source_box.x2, t.source_box.y2],
                list(t.source_box.center),
            ]
        )
        back = t.to_original(t.to_crop(pts))
        assert np.abs(back - pts).max() < 1e-6

    def test_resampled_pixels_match_bilinear(self):
        frame = make_frame()
        sub, t = crop_resample(frame, BoundingBox(50, 40, 8, 8), self.cfg)
        assert sub.pixels.dtype == np.uint8
        assert sub.pixels.shape == (128, 128)
        # corner pixels of a 4x upscale reproduce the source corners
        x0, y0 = int(t.source_box.x), int(t.source_box.y)
        assert sub.pixels[0, 0] == frame.pixels[y0, x0]


class TestMaskToOriginal:
    def test_identity_requires_matching_shape(self):
        t = crop_transform_for(BoundingBox(0, 0, 60, 60), 80, 70, PipelineConfig())
        assert t.is_identity
        with pytest.raises(ValueError):
            mask_to_original(Mask.zeros(10, 10), t, 80, 70)
        out = mask_to_original(Mask.zeros(80, 70), t, 80, 70)
        assert out.bits.shape == (70, 80)

    def test_down_mapping_matches_per_pixel_lookup(self):
        cfg = PipelineConfig()
        t = crop_transform_for(BoundingBox(50, 40, 8, 6), 160, 120, cfg)
        rng = np.random.default_rng(3)
        crop_w, crop_h = t.output_size
        crop_mask = Mask(rng.random((crop_h, crop_w)) < 0.4)
        out = mask_to_original(crop_mask, t, 160, 120)
        x0, y0 = int(t.source_box.x), int(t.source_box.y)
        for i in range(120):
            for j in range(160):
                inside = (x0 <= j < x0 + int(t.source_box.w)
                          and y0 <= i < y0 + int(t.source_box.h))
                if not inside:
                    assert not out.bits[i, j]
                    continue
                cx, cy = t.to_crop(np.array([[j + 0.5, i + 0.5]]))[0]
                expected = crop_mask.bits[
                    min(int(np.floor(cy)), crop_h - 1),
                    min(int(np.floor(cx)), crop_w - 1),
                ]
                assert out.bits[i, j] == expected


class TestSamplePoints:
    def test_exact_count_takes_every_center(self):
        bits = np.zeros((5, 5), dtype=bool)
        bits[[0, 2, 4], [1, 3, 0]] = True
        ps = sample_points(Mask(bits), n=3, seed=11)
        got = {tuple(p) for p in ps.points}
        assert got == {(1.5, 0.5), (3.5, 2.5), (0.5, 4.5)}

    def test_single_bit_with_replacement(self):
        bits = np.zeros((4, 4), dtype=bool)
        bits[2, 3] = True
        ps = sample_points(Mask(bits), n=5, seed=11)
        assert len(ps) == 5
        assert (ps.points == np.array([3.5, 2.5])).all()

    def test_deterministic_per_seed(self):
        bits = np.random.default_rng(0).random((20, 20)) < 0.5
        a = sample_points(Mask(bits), n=10, seed=42)
        b = sample_points(Mask(bits), n=10, seed=42)
        assert (a.points == b.points).all()

    def test_distinct_seeds_usually_differ(self):
        bits = np.ones((10, 10), dtype=bool)  # area 100 >= 2n
        a = sample_points(Mask(bits), n=20, seed=1)
        b = sample_points(Mask(bits), n=20, seed=2)
        if (a.points == b.points).all():
            warnings.warn("distinct seeds produced identical samples", stacklevel=1)

    def test_empty_mask_rejected(self):
        with pytest.raises(EmptyMaskError):
            sample_points(Mask.zeros(4, 4), n=3, seed=0)

    @given(
        bits=npst.arrays(dtype=bool, shape=(9, 11)),
        n=st.integers(1, 30),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_output_is_subset_of_set_bit_centers(self, bits, n, seed):
        if not bits.any():
            return
        mask = Mask(bits)
        ps = sample_points(mask, n=n, seed=seed)
        assert len(ps) == n
        centers = {
            (j + 0.5, i + 0.5)
            for i, j in zip(*np.nonzero(bits))
        }
        assert {tuple(p) for p in ps.points} <= centers
        if mask.area >= n:
            assert len({tuple(p) for p in ps.points}) == n  # no replacement


class TestErodeMask:
    def test_erode_full_square(self):
        bits = np.ones((5, 5), dtype=bool)
        expected = reference.erode_by_hand(bits, 1)
        inner = np.zeros((5, 5), dtype=bool)
        inner[1:4, 1:4] = True
        assert (expected == inner).all()
        assert (erode_mask(Mask(bits), 1).bits == expected).all()

    def test_zero_radius_copies(self):
        bits = np.random.default_rng(5).random((8, 8)) < 0.5
        out = erode_mask(Mask(bits), 0)
        assert (out.bits == bits).all()
        assert out.bits is not bits

    def test_negative_radius_dilates(self):
        bits = np.zeros((6, 6), dtype=bool)
        bits[3, 3] = True
        expected = reference.dilate_by_hand(bits, 1)
        assert (erode_mask(Mask(bits), -1).bits == expected).all()

    @given(
        bits=npst.arrays(dtype=bool, shape=(10, 10)),
        radius=st.integers(1, 2),
    )
    def test_matches_hand_rolled_morphology(self, bits, radius):
        assert (erode_mask(Mask(bits), radius).bits
                == reference.erode_by_hand(bits, radius)).all()
        assert (erode_mask(Mask(bits), -radius).bits
                == reference.dilate_by_hand(bits, radius)).all()


class TestRunLength:
    def test_single_leading_bit(self):
        bits = np.zeros((2, 2), dtype=bool)
        bits[0, 0] = True
        assert reference.rle_counts_by_hand(bits) == [0, 1, 3]
        assert rle_encode(Mask(bits)) == "0 1 3"

    def test_all_clear_and_all_set(self):
        assert rle_encode(Mask.zeros(3, 2)) == "6"
        assert rle_encode(Mask(np.ones((2, 3), dtype=bool))) == "0 6"

    def test_column_major_order(self):
        bits = np.array([[True, False], [False, True]])
        # column-major traversal: T F F T
        assert reference.rle_counts_by_hand(bits) == [0, 1, 2, 1]
        assert rle_encode(Mask(bits)) == "0 1 2 1"

    def test_decode_validates_totals(self):
        with pytest.raises(ValueError, match="sum"):
            rle_decode("3 2", width=2, height=2)
        with pytest.raises(ValueError, match="non-negative"):
            rle_decode("-1 5", width=2, height=2)
        with pytest.raises(ValueError, match="bad run-length"):
            rle_decode("1 x 2", width=2, height=2)

    @given(bits=npst.arrays(dtype=bool, shape=st.tuples(st.integers(1, 20), st.integers(1, 20))))
    def test_round_trip(self, bits):
        mask = Mask(bits)
        encoded = rle_encode(mask)
        assert encoded == " ".join(str(c) for c in reference.rle_counts_by_hand(bits))
        decoded = rle_decode(encoded, width=mask.width, height=mask.height)
        assert (decoded.bits == bits).all()
