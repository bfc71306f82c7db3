"""Length-bucketed minibatch index grouping, shared by all trainable models."""

from __future__ import annotations

import numpy as np


def bucket_indices(lengths: list[int], size: int, seed) -> list[list[int]]:
    """Group corpus indices into minibatches of at most ``size``.

    Every index appears exactly once.  A seeded shuffle is followed by a
    stable sort on length, so items of equal length stay in random relative
    order while batches pack near-equal lengths (little padding); batch
    order is then shuffled with the same rng.
    """
    if size < 1:
        raise ValueError(f"minibatch size must be >= 1, got {size}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(lengths))
    order = order[np.argsort([lengths[i] for i in order], kind="stable")]
    chunks = [order[i : i + size].tolist() for i in range(0, len(order), size)]
    rng.shuffle(chunks)
    return chunks


def eval_chunks(lengths: list[int], size: int) -> list[list[int]]:
    """Deterministic length-sorted grouping for evaluation passes."""
    order = sorted(range(len(lengths)), key=lambda i: lengths[i])
    return [order[i : i + size] for i in range(0, len(order), size)]
