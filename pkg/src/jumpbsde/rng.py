"""Counter-based random numbers.

Each variate is a pure function of ``(seed, path, step, channel)``: the
counter is hashed with the SplitMix64 finaliser. Results do not depend on how
paths are chunked or distributed across workers.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

CHANNEL_W = 1
CHANNEL_TAU = 2

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def _mix_int(value: int) -> int:
    return int(_mix(np.array([value & _MASK], dtype=np.uint64))[0])


def derive_seed(master: int, *salt: int) -> int:
    """Deterministic child seed, e.g. one per grid size in a study."""
    key = _mix_int(int(master))
    for s in salt:
        key = _mix_int(key ^ (int(s) & _MASK))
    return key


def uniforms(seed: int, channel: int, paths, steps) -> np.ndarray:
    """Uniforms in (0, 1) for every broadcast pair of path and step counters."""
    key = np.uint64(derive_seed(seed, channel))
    paths = np.asarray(paths, dtype=np.uint64)
    steps = np.asarray(steps, dtype=np.uint64)
    h = _mix(_mix(key ^ paths) ^ steps)
    # 53 random mantissa bits, shifted off the endpoints
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normals(seed: int, channel: int, paths, steps) -> np.ndarray:
    return ndtri(uniforms(seed, channel, paths, steps))
