"""Deterministic RNG derivation.

Every random choice in a run is derived from one integer seed plus a list
of labels (strings or ints), so the same (seed, labels) always yields the
same stream on every worker and every platform.
"""

import numpy as np


def _label_entropy(label):
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"labels must be non-negative, got {label}")
        return int(label)
    if isinstance(label, str):
        return int.from_bytes(label.encode("utf-8"), "little")
    raise TypeError(f"unsupported label type: {type(label).__name__}")


def derive_rng(seed, *labels):
    """A numpy Generator that is a pure function of (seed, labels)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_label_entropy(l) for l in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))
