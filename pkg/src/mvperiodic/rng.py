"""Counter-based random streams.

Every Gaussian increment is a pure function of ``(key, particle, block, step)``,
so results do not depend on evaluation order, chunking or thread count.
The block cipher is Philox4x32-10 (Salmon et al., SC'11), vectorized over
numpy ``uint64`` arrays holding 32-bit lanes.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["philox4x32", "derive_seed", "uniform_pairs", "standard_normals", "uniforms"]

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_SHIFT32 = np.uint64(32)


def _mulhilo(m: np.uint64, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    prod = m * x  # both < 2**32, product fits in uint64
    return prod >> _SHIFT32, prod & _MASK32


def philox4x32(counter, key, rounds: int = 10) -> tuple[np.ndarray, ...]:
    """Apply Philox4x32 to broadcastable counter words.

    ``counter`` is a 4-sequence of uint32-valued arrays (or ints), ``key`` a
    pair of ints. Returns four uint64 arrays holding 32-bit outputs.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ np.uint64(k0), lo1, hi0 ^ c3 ^ np.uint64(k1), lo0
    return c0, c1, c2, c3


def derive_seed(seed: int, *labels) -> int:
    """Derive a 64-bit substream seed from a parent seed and labels."""
    text = repr((int(seed) & 0xFFFFFFFFFFFFFFFF,) + tuple(labels)).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def _key(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def _to_unit(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    # 53-bit mantissa, offset by half an ulp so the result lies in (0, 1)
    a = (hi >> np.uint64(5)).astype(np.float64)
    b = (lo >> np.uint64(6)).astype(np.float64)
    return (a * 67108864.0 + b + 0.5) / 9007199254740992.0


def uniform_pairs(seed: int, index: np.ndarray, block: int, step: int) -> tuple[np.ndarray, np.ndarray]:
    """Two independent U(0,1) arrays for each entry of ``index``."""
    index = np.asarray(index, dtype=np.uint64)
    step = int(step)
    x0, x1, x2, x3 = philox4x32(
        (index, np.uint64(block), np.uint64(step & 0xFFFFFFFF), np.uint64(step >> 32)),
        _key(seed),
    )
    return _to_unit(x0, x1), _to_unit(x2, x3)


def uniforms(seed: int, index: np.ndarray, step: int) -> np.ndarray:
    """One U(0,1) variate per entry of ``index`` on stream ``(seed, step)``."""
    return uniform_pairs(seed, index, 0, step)[0]


def standard_normals(seed: int, index: np.ndarray, step: int, dim: int) -> np.ndarray:
    """Standard normal array of shape ``(len(index), dim)``.

    Row ``i`` depends only on ``(seed, index[i], step)``; Box-Muller turns
    each Philox block into two normals.
    """
    index = np.asarray(index, dtype=np.uint64)
    out = np.empty((index.shape[0], dim), dtype=np.float64)
    for block in range((dim + 1) // 2):
        u1, u2 = uniform_pairs(seed, index, block, step)
        rad = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        out[:, 2 * block] = rad * np.cos(ang)
        if 2 * block + 1 < dim:
            out[:, 2 * block + 1] = rad * np.sin(ang)
    return out
