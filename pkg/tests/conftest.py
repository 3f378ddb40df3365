import numpy as np
import pytest

from pixswap.core import Batch, RngStream


def make_random_batch(rng: RngStream, b, h=6, w=5, c=3, num_ids=None):
    images = rng.random((b, c, h, w))
    masks = rng.integers(0, 6, size=(b, h, w)).astype(np.uint8)
    ids = rng.integers(0, num_ids or max(b, 2), size=b)
    return Batch(images, masks, ids)


def class_multiset(batch: Batch, class_id):
    """Sorted batch-wide pixel values of one mask class."""
    chunks = [
        batch.images[i][:, batch.masks[i] == class_id].ravel()
        for i in range(batch.size)
    ]
    return np.sort(np.concatenate(chunks)) if chunks else np.empty(0)


@pytest.fixture
def rng():
    return RngStream(0)
