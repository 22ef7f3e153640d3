"""Counter-based normal streams.

Each (seed, path, channel) triple owns an independent Philox key; the step
index is the Philox counter position. Any path can therefore be regenerated
on its own, and results do not depend on how paths are split across workers.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

CHANNEL_W = 0
CHANNEL_Z = 1

_MAX_CHANNELS = 256
_U53 = 2.0**-53


def _key(seed: int, path: int, channel: int) -> np.ndarray:
    if not 0 <= channel < _MAX_CHANNELS:
        raise ValueError(f"channel must be in [0, {_MAX_CHANNELS}), got {channel}")
    if path < 0 or path >= 2**56:
        raise ValueError("path index out of range")
    return np.array([seed & 0xFFFFFFFFFFFFFFFF, (path << 8) | channel], dtype=np.uint64)


def uniforms(seed: int, path: int, channel: int, steps: int) -> np.ndarray:
    """Open-interval uniforms u_i in (0, 1), i = 0..steps-1."""
    raw = np.random.Philox(key=_key(seed, path, channel)).random_raw(steps)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53


def normals(seed: int, path: int, channel: int, steps: int) -> np.ndarray:
    """Standard normals by inversion of the stream's uniforms."""
    return ndtri(uniforms(seed, path, channel, steps))


def normal_block(seed: int, paths, channel: int, steps: int, antithetic: bool = False) -> np.ndarray:
    """Normals for several paths, shape (len(paths), steps).

    With ``antithetic`` path p reuses the stream of p // 2 with sign (-1)^p.
    """
    paths = np.asarray(paths, dtype=np.int64)
    raw = np.empty((paths.size, steps), dtype=np.uint64)
    for row, p in enumerate(paths):
        stream = int(p) // 2 if antithetic else int(p)
        raw[row] = np.random.Philox(key=_key(seed, stream, channel)).random_raw(steps)
    out = ndtri(((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53)
    if antithetic:
        out[paths % 2 == 1] *= -1.0
    return out
