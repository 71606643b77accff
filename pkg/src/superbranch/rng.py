"""Counter-based random streams.

Every replica owns a Philox stream keyed by (master seed, replica index),
so results are independent of how replicas are scheduled across workers.
"""

import numpy as np

# replica indices < _AUX_BASE are simulation replicas; larger indices are
# reserved for auxiliary harness draws
_AUX_BASE = 2**48


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    """Stream for one simulation replica."""
    if not (0 <= replica < _AUX_BASE):
        raise ValueError(f"replica index out of range: {replica}")
    return np.random.Generator(np.random.Philox(key=[seed, replica]))


def aux_rng(seed: int, channel: int = 0) -> np.random.Generator:
    """Stream for harness-level draws (never collides with replica streams)."""
    return np.random.Generator(np.random.Philox(key=[seed, _AUX_BASE + channel]))
