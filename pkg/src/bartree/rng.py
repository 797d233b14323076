"""Counter-based random streams.

Every simulation derives its randomness from a user seed through the
Philox counter-based generator, keyed by ``(seed, stream constant)``.
The two fixed stream constants split one seed into independent streams
for the observation mask and for the driven noise, so the mask drawn
for a given seed never changes when noise parameters do, and replicates
with distinct seeds can run concurrently.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

# Fixed splitting constants (hex digits of pi); distinct keys give
# independent Philox streams.
MASK_STREAM = 0x243F6A8885A308D3
NOISE_STREAM = 0x452821E638D01377


def generator(seed: int, stream: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, stream)``."""
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValidationError(f"seed must be a non-negative integer, got {seed!r}")
    key = np.array([np.uint64(seed), np.uint64(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
