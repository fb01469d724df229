"""Counter-based random streams.

Every draw is addressed by ``(seed, stream, step, index)``: the key of a Philox
generator is built from ``seed`` and ``stream``, the second counter word holds
``step`` and the output position inside the block sequence is ``index``.  A
particle's noise therefore never depends on how many other particles exist or
in which order work is scheduled.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

MASK64 = (1 << 64) - 1

# stream tags
INITIAL = 1
BROWNIAN = 2
RESAMPLE = 3
BOOTSTRAP = 4


def _generator(seed: int, stream: int, step: int) -> np.random.Philox:
    if seed < 0 or seed > MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    key = (seed & MASK64) | ((stream & MASK64) << 64)
    counter = (step & MASK64) << 64
    return np.random.Philox(counter=counter, key=key)


def uniforms(seed: int, stream: int, step: int, n: int) -> np.ndarray:
    """``n`` uniforms in the open interval (0, 1), one 64-bit word each."""
    raw = _generator(seed, stream, step).random_raw(n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(seed: int, stream: int, step: int, n: int) -> np.ndarray:
    """Standard normals by inverse CDF, so draw ``i`` uses uniform ``i`` only."""
    return ndtri(uniforms(seed, stream, step, n))


def generator(seed: int, stream: int, step: int = 0) -> np.random.Generator:
    """A ``Generator`` for draws where per-index addressing is not needed."""
    return np.random.Generator(_generator(seed, stream, step))
