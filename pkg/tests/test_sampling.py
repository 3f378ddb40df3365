import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import class_multiset, make_random_batch
from pixswap.core import Batch, ConfigError, RngStream
from pixswap.sampling import (
    PixelBank,
    SamplingConfig,
    apply_bank,
    build_bank,
    generate,
    shuffle_batch,
)


def single_pixel_batch(values, class_positions, b=1, h=2, w=2):
    """Batch of zero images with chosen class-2 pixels set."""
    images = np.zeros((b, 3, h, w))
    masks = np.zeros((b, h, w), dtype=np.uint8)
    for (i, r, c), v in zip(class_positions, values):
        images[i, :, r, c] = v
        masks[i, r, c] = 2
    return Batch(images, masks, np.zeros(b, dtype=int))


class TestShuffleBatch:
    def test_b1_is_identity(self, rng):
        batch = make_random_batch(rng, 1)
        assert shuffle_batch(batch, rng).tolist() == [0]

    def test_deterministic(self):
        batch = make_random_batch(RngStream(0), 3)
        a = shuffle_batch(batch, RngStream(42))
        b = shuffle_batch(batch, RngStream(42))
        assert np.array_equal(a, b)

    def test_uniform_over_permutations(self):
        batch = make_random_batch(RngStream(0), 3)
        rng = RngStream(9)
        counts = {}
        trials = 10_000
        for _ in range(trials):
            perm = tuple(shuffle_batch(batch, rng).tolist())
            counts[perm] = counts.get(perm, 0) + 1
        assert len(counts) == 6
        for count in counts.values():
            assert abs(count / trials - 1 / 6) < 0.02


class TestBuildBank:
    def test_empty_class(self, rng):
        batch = single_pixel_batch([], [])
        bank = build_bank(batch, np.array([0]), 2, SamplingConfig())
        assert bank.size == 0

    def test_single_pixel(self):
        batch = single_pixel_batch([[0.1, 0.2, 0.3]], [(0, 0, 0)])
        bank = build_bank(batch, np.array([0]), 2, SamplingConfig())
        assert bank.pixels.tolist() == [[0.1, 0.2, 0.3]]

    def test_permutation_orders_donors(self):
        # image 0 holds pixels p0,p1; image 1 holds q0,q1 (raster order)
        batch = single_pixel_batch(
            [[0.1] * 3, [0.2] * 3, [0.7] * 3, [0.8] * 3],
            [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0)],
            b=2,
        )
        bank = build_bank(batch, np.array([1, 0]), 2, SamplingConfig())
        assert bank.pixels[:, 0].tolist() == [0.7, 0.8, 0.1, 0.2]

    def test_invalid_class(self, rng):
        batch = make_random_batch(rng, 2)
        with pytest.raises(ConfigError):
            build_bank(batch, np.array([0, 1]), 1, SamplingConfig())


class TestApplyBank:
    def test_self_swap_is_identity(self, rng):
        batch = make_random_batch(rng, 1)
        bank = build_bank(batch, np.array([0]), 2, SamplingConfig())
        out = apply_bank(batch, bank)
        assert np.array_equal(out.images, batch.images)

    def test_two_images_exchange_pixels(self):
        batch = single_pixel_batch(
            [[0.1] * 3, [0.2] * 3, [0.7] * 3, [0.8] * 3],
            [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0)],
            b=2,
        )
        bank = build_bank(batch, np.array([1, 0]), 2, SamplingConfig())
        out = apply_bank(batch, bank)
        # image 0's class pixels become q0,q1; image 1's become p0,p1
        assert out.images[0, 0, 0, 0] == 0.7
        assert out.images[0, 0, 1, 1] == 0.8
        assert out.images[1, 0, 0, 1] == 0.1
        assert out.images[1, 0, 1, 0] == 0.2

    def test_empty_bank_noop(self, rng):
        batch = single_pixel_batch([], [])
        bank = build_bank(batch, np.array([0]), 2, SamplingConfig())
        out = apply_bank(batch, bank)
        assert np.array_equal(out.images, batch.images)

    def test_count_mismatch_detected(self, rng):
        batch = make_random_batch(rng, 2)
        bank = PixelBank(class_id=2, pixels=np.zeros((9999, 3)), permutation=np.array([0, 1]))
        with pytest.raises(RuntimeError, match="mask mutated"):
            apply_bank(batch, bank)


class TestGenerate:
    def test_no_class_pixels_noop(self, rng):
        images = rng.random((3, 3, 4, 4))
        masks = np.zeros((3, 4, 4), dtype=np.uint8)  # all background
        batch = Batch(images, masks, np.arange(3))
        out = generate(batch, SamplingConfig(swap_upper=True, swap_pants=False), rng)
        assert np.array_equal(out.images, batch.images)

    def test_b1_identity(self):
        rng = RngStream(3)
        batch = make_random_batch(rng, 1)
        out = generate(batch, SamplingConfig(), rng)
        assert np.array_equal(out.images, batch.images)

    def test_determinism(self):
        batch = make_random_batch(RngStream(0), 4)
        a = generate(batch, SamplingConfig(), RngStream(5))
        b = generate(batch, SamplingConfig(), RngStream(5))
        assert np.array_equal(a.images, b.images)

    def test_config_requires_a_swap(self):
        with pytest.raises(ConfigError):
            SamplingConfig(swap_upper=False, swap_pants=False)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6),
           st.sampled_from(["raster", "shuffled"]))
    @settings(max_examples=40, deadline=None)
    def test_conservation_and_locality(self, seed, b, bank_order):
        rng = RngStream(seed)
        batch = make_random_batch(rng, b)
        out = generate(batch, SamplingConfig(bank_order=bank_order), rng.split())
        for class_id in (2, 3):
            assert np.array_equal(
                class_multiset(batch, class_id), class_multiset(out, class_id)
            )
        untouched = ~np.isin(batch.masks, (2, 3))
        sel = np.broadcast_to(untouched[:, None], batch.images.shape)
        assert np.array_equal(batch.images[sel], out.images[sel])
        assert np.array_equal(batch.masks, out.masks)
        assert np.array_equal(batch.identities, out.identities)

    def test_shared_permutation_mode(self):
        batch = make_random_batch(RngStream(2), 5)
        cfg = SamplingConfig(independent_permutations=False)
        out = generate(batch, cfg, RngStream(11))
        for class_id in (2, 3):
            assert np.array_equal(
                class_multiset(batch, class_id), class_multiset(out, class_id)
            )
