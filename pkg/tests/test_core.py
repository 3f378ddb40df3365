import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pixswap.core import (
    DataError,
    Image,
    RngStream,
    SemanticMask,
    pixel_at,
    raster_positions,
)


class TestPixelAt:
    def test_single_pixel(self):
        img = Image(np.full((1, 1, 1), 0.5))
        assert pixel_at(img, 0, 0) == pytest.approx([0.5])

    def test_zero_tensor(self):
        img = Image(np.zeros((3, 2, 2)))
        assert pixel_at(img, 1, 1) == pytest.approx([0.0, 0.0, 0.0])

    def test_channel_order(self):
        data = np.zeros((3, 2, 2))
        for k in range(3):
            data[k] = k / 10
        assert pixel_at(Image(data), 0, 1) == pytest.approx([0.0, 0.1, 0.2])

    def test_out_of_range(self):
        img = Image(np.zeros((3, 2, 2)))
        with pytest.raises(IndexError):
            pixel_at(img, 2, 0)
        with pytest.raises(IndexError):
            pixel_at(img, 0, -1)

    def test_round_trip_with_write(self):
        rng = RngStream(1)
        data = rng.random((3, 4, 5))
        img = Image(data.copy())
        for r in range(4):
            for c in range(5):
                value = rng.random(3)
                data[:, r, c] = value
                assert pixel_at(Image(data), r, c) == pytest.approx(value)


class TestRasterPositions:
    def test_empty(self):
        mask = SemanticMask(np.zeros((3, 3), dtype=int))
        assert raster_positions(mask, 2) == []

    def test_diagonal(self):
        mask = SemanticMask(np.array([[2, 0], [0, 2]]))
        assert raster_positions(mask, 2) == [(0, 0), (1, 1)]

    def test_full_coverage(self):
        mask = SemanticMask(np.full((2, 2), 3))
        assert raster_positions(mask, 3) == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_invalid_class(self):
        mask = SemanticMask(np.zeros((2, 2), dtype=int))
        with pytest.raises(ValueError):
            raster_positions(mask, 6)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_strictly_increasing_raster_index(self, seed):
        rng = RngStream(seed)
        labels = rng.integers(0, 6, size=(5, 7))
        mask = SemanticMask(labels)
        for class_id in range(6):
            flat = [r * 7 + c for r, c in raster_positions(mask, class_id)]
            assert flat == sorted(flat)
            assert len(set(flat)) == len(flat)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_classes_tile_the_mask(self, seed):
        rng = RngStream(seed)
        mask = SemanticMask(rng.integers(0, 6, size=(6, 4)))
        total = sum(len(raster_positions(mask, k)) for k in range(6))
        assert total == 6 * 4


class TestTypes:
    def test_mask_rejects_bad_labels(self):
        with pytest.raises(DataError):
            SemanticMask(np.full((2, 2), 6))

    def test_image_shape_checked(self):
        with pytest.raises(DataError):
            Image(np.zeros((2, 2)))


class TestRngStream:
    def test_equal_seeds_equal_sequences(self):
        a = RngStream(1234)
        b = RngStream(1234)
        assert np.array_equal(a.random(10_000), b.random(10_000))

    def test_split_streams_differ_from_parent(self):
        root = RngStream(7)
        child = root.split()
        assert not np.array_equal(root.random(100), child.random(100))

    def test_split_is_deterministic(self):
        a = RngStream(5).split()
        b = RngStream(5).split()
        assert np.array_equal(a.random(100), b.random(100))
