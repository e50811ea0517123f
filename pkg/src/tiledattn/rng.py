"""Counter-based dropout randomness.

The keep/drop decision for score entry ``(i, j)`` is a pure function of
``(seed, i, j)``, so any traversal order (tiled forward, tiled backward,
materialised reference) sees the same mask.

Hash, fixed as part of the on-disk/cross-platform contract::

    mix(z)   = splitmix64 finaliser:
               z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
               z ^= z >> 27; z *= 0x94D049BB133111EB
               z ^= z >> 31            (all arithmetic mod 2**64)
    key      = mix(seed + 0x9E3779B97F4A7C15)
    h(i, j)  = mix(key ^ mix((i << 32) | j))
    u(i, j)  = (h >> 11) * 2**-53      in [0, 1)

An entry is kept iff ``u >= p``; kept entries are scaled by ``1 / (1 - p)``.
Indices must fit in 32 bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    z &= MASK64
    z ^= z >> 30
    z = (z * _M1) & MASK64
    z ^= z >> 27
    z = (z * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def _check_p(p):
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")


@dataclass(frozen=True)
class DropoutRng:
    """The saved generator state: nothing but the 64-bit seed."""

    seed: int

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & MASK64)

    @property
    def key(self) -> int:
        return mix64(self.seed + GOLDEN)

    def uniform(self, i: int, j: int) -> float:
        """Scalar reference path, pure Python integers."""
        if not (0 <= i < 1 << 32 and 0 <= j < 1 << 32):
            raise ValueError("dropout indices must fit in 32 bits")
        h = mix64(self.key ^ mix64((i << 32) | j))
        return (h >> 11) * _INV_2_53

    def uniform_block(self, rows, cols) -> np.ndarray:
        """Vectorised ``uniform`` over the outer product of global row/col indices."""
        r = np.asarray(rows, dtype=np.uint64)[:, None]
        c = np.asarray(cols, dtype=np.uint64)[None, :]
        ctr = (r << np.uint64(32)) | c
        with np.errstate(over="ignore"):
            h = _mix64_np(np.uint64(self.key) ^ _mix64_np(ctr))
        return (h >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def scale_block(self, rows, cols, p: float) -> np.ndarray:
        """Dropout multipliers in ``{0, 1/(1-p)}`` for a block of positions."""
        _check_p(p)
        if p == 0.0:
            return np.ones((len(rows), len(cols)))
        keep = self.uniform_block(rows, cols) >= p
        return np.where(keep, 1.0 / (1.0 - p), 0.0)


def dropout_scale(rng: DropoutRng, i: int, j: int, p: float) -> float:
    _check_p(p)
    if p == 0.0:
        return 1.0
    return 1.0 / (1.0 - p) if rng.uniform(i, j) >= p else 0.0
