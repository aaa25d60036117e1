import numpy as np
import pytest

from leafhash import BlockSet


def one_hot_block(leaves, leaf_count):
    leaves = np.asarray(leaves)
    block = np.zeros((leaf_count, leaves.size), dtype=np.uint8)
    block[leaves, np.arange(leaves.size)] = 1
    return block


def random_blockset(n_blocks, n_samples, leaf_count=2, rng=None):
    """Blocks with uniformly random leaf assignments."""
    rng = np.random.default_rng(rng)
    return BlockSet.from_blocks(
        [one_hot_block(rng.integers(0, leaf_count, n_samples), leaf_count)
         for _ in range(n_blocks)]
    )


def treelike_blockset(n_blocks, n_samples, n_classes, flip, rng):
    """Blocks shaped like tree outputs: a random class bipartition per block
    plus routing noise (label-side flipped with probability ``flip``)."""
    labels = rng.integers(0, n_classes, size=n_samples)
    blocks = []
    for _ in range(n_blocks):
        sides = rng.integers(0, 2, size=n_classes)
        leaves = sides[labels]
        leaves = np.where(rng.random(n_samples) < flip, 1 - leaves, leaves)
        blocks.append(one_hot_block(leaves, 2))
    return BlockSet.from_blocks(blocks), labels


@pytest.fixture
def rng():
    return np.random.default_rng(0)
