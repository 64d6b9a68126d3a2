"""Counter-based random streams keyed by (seed, path, step, driver).

Every draw is a pure function of its key: path ``p`` at step ``s`` for
driver ``d`` always reads the Philox block with counter ``(p, s, d, 0)``
under key ``seed``.  A worker that only owns paths ``[a, b)`` therefore
produces exactly the slice ``[a:b]`` of the single-process output.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_TWO_POW_M53 = 2.0 ** -53
_MASK64 = (1 << 64) - 1


def _key(seed: int) -> np.ndarray:
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.array([seed & _MASK64, (seed >> 64) & _MASK64], dtype=np.uint64)


def raw_block(seed: int, step: int, driver: int, start: int, count: int) -> np.ndarray:
    """First 64-bit word of the Philox block for paths ``start .. start+count-1``."""
    bitgen = np.random.Philox(key=_key(seed), counter=[start, step, driver, 0])
    return bitgen.random_raw(4 * count)[::4]


def uniforms(seed: int, step: int, driver: int, start: int, count: int) -> np.ndarray:
    """Uniforms on the open interval (0, 1), one per path."""
    raw = raw_block(seed, step, driver, start, count)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_POW_M53


def normals(seed: int, step: int, driver: int, start: int, count: int) -> np.ndarray:
    """Standard normals by inverse transform of :func:`uniforms`."""
    return ndtri(uniforms(seed, step, driver, start, count))
