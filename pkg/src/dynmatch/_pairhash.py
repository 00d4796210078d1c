"""Counter-based deterministic pairwise coin flips.

Every unordered agent pair (i, j) owns one persistent uniform draw derived
by hashing (min id, max id, stream seed).  Repeated queries of the same pair
always see the same coin, which is what keeps batch-policy re-queries and
common-random-number comparisons across policies consistent without storing
O(n^2) draws.

Two implementations are provided and must stay bit-identical: a scalar path
on Python ints (simulation hot loop) and a vectorized path on uint64 numpy
arrays (batch graph construction, static pool sampling).
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_PAIR_C = 0xD2B74407B1CE6E93
_MIX_C1 = 0xBF58476D1CE4E5B9
_MIX_C2 = 0x94D049BB133111EB

_GAMMA_U = np.uint64(_GAMMA)
_PAIR_C_U = np.uint64(_PAIR_C)
_MIX_C1_U = np.uint64(_MIX_C1)
_MIX_C2_U = np.uint64(_MIX_C2)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)

TWO64 = 1 << 64


def mix64(z: int) -> int:
    """64-bit finalizer (splitmix64 style) on a Python int."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX_C1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX_C2) & _MASK
    return z ^ (z >> 31)


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U30)) * _MIX_C1_U
    z = (z ^ (z >> _U27)) * _MIX_C2_U
    return z ^ (z >> _U31)


def agent_key(agent_id: int, stream_seed: int) -> int:
    """Per-agent key; pair draws combine two keys."""
    return mix64((stream_seed + (agent_id + 1) * _GAMMA) & _MASK)


def agent_keys(n: int, stream_seed: int, start: int = 0) -> np.ndarray:
    """Vectorized agent keys for ids start..start+n-1 (uint64 array)."""
    ids = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    seed = np.uint64(stream_seed & _MASK)
    return _mix64_np(seed + ids * _GAMMA_U)


def pair_u64(key_lo: int, key_hi: int) -> int:
    """Uniform uint64 for the ordered key pair (key of min id, key of max id)."""
    return mix64(key_lo ^ ((key_hi * _PAIR_C) & _MASK))


def pair_u64_np(keys_lo: np.ndarray, keys_hi: np.ndarray) -> np.ndarray:
    return _mix64_np(keys_lo ^ (keys_hi * _PAIR_C_U))


def threshold(p: float) -> int:
    """Acceptance threshold: the pair is compatible iff pair_u64 < threshold(p).

    p=0 maps to 0 (never) and p=1 to 2^64 (always).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    t = int(round(p * TWO64))
    return min(max(t, 0), TWO64)


def below_threshold_np(u: np.ndarray, thr: int) -> np.ndarray:
    """Vectorized u < thr handling the thr == 2^64 edge case."""
    if thr >= TWO64:
        return np.ones(u.shape, dtype=bool)
    if thr <= 0:
        return np.zeros(u.shape, dtype=bool)
    return u < np.uint64(thr)
