"""Seed handling.

Two schemes are used:

* counter-based uniforms (:func:`counter_uniforms`) for tree sampling, where
  the stream of a vertex is addressed by its creation counter, so a vertex's
  draws never depend on how many draws other vertices consumed;
* :func:`derive_seed` / :func:`make_rng` for everything else (layer process,
  Metropolis, replicas), backed by :class:`numpy.random.SeedSequence`.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SUB = np.uint64(0xD6E8FEB86659FD93)
_U64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _mix_int(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return z ^ (z >> 31)


def _seed_key(seed: int) -> int:
    return _mix_int(((int(seed) & _U64) + 0x9E3779B97F4A7C15) & _U64)


def _uniform_int(key: int, c: int, sub: int) -> float:
    z = key ^ (((c + 1) * 0x9E3779B97F4A7C15 + sub * 0xD6E8FEB86659FD93) & _U64)
    return (_mix_int(_mix_int(z)) >> 11) * (1.0 / 9007199254740992.0)


def counter_uniforms(seed: int, counters, sub: int = 0) -> np.ndarray:
    """Uniforms in [0, 1) addressed by ``(seed, counter, sub)``.

    ``counters`` may be an int or an integer array; the result has the same
    shape. 53-bit resolution.
    """
    key = _seed_key(seed)
    c = np.asarray(counters)
    if c.size <= 16:
        # pure-int path, bit-identical to the vectorized one; faster for tiny inputs
        flat = [_uniform_int(key, int(x), sub) for x in c.ravel()]
        return np.array(flat, dtype=np.float64).reshape(c.shape)
    c = c.astype(np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(key) ^ ((c + np.uint64(1)) * _GOLDEN + np.uint64(sub) * _SUB)
        z = _mix(_mix(z))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def derive_seed(master: int, *keys: int) -> int:
    """A 64-bit child seed; a pure function of ``(master, *keys)``."""
    ss = np.random.SeedSequence([int(master) & _U64, *[int(k) & _U64 for k in keys]])
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def make_rng(seed) -> np.random.Generator:
    """Generator from an int seed; Generators pass through untouched."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(int(seed) & _U64))
