"""Pinned pseudo-random stream.

The generator is fully specified so that any implementation can reproduce
the same draws bit for bit:

* Seeding: ``state = splitmix64(seed mod 2**64)``; a zero result is replaced
  by ``0x9E3779B97F4A7C15`` (xorshift cannot leave the all-zero state).
* Step (xorshift64*): ``x ^= x >> 12; x ^= (x << 25) mod 2**64;
  x ^= x >> 27``; the new state is ``x`` and the emitted word is
  ``(x * 0x2545F4914F6CDD1D) mod 2**64``.
* Uniform double in [0, 1): ``(word >> 11) * 2**-53``.
* Standard normal: Box-Muller on two consecutive uniforms ``u1, u2``,
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``. The sine branch is discarded so
  every normal consumes exactly two words.
* Integer below ``n``: ``word mod n``.
* Permutation: Fisher-Yates, ``for i = n-1 .. 1: j = integer below i+1;
  swap(a[i], a[j])``.
"""
from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_STAR = 0x2545F4914F6CDD1D


def splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class Rng:
    """splitmix64-seeded xorshift64* stream."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        state = splitmix64(int(seed) & MASK64)
        self.state = state if state else _GOLDEN

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * _STAR) & MASK64

    def words(self, n: int) -> np.ndarray:
        """``n`` consecutive raw words as uint64."""
        out = np.empty(n, dtype=np.uint64)
        x = self.state
        for i in range(n):
            x ^= x >> 12
            x ^= (x << 25) & MASK64
            x ^= x >> 27
            out[i] = (x * _STAR) & MASK64
        self.state = x
        return out

    def uniform(self, size=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = _as_shape(size)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.words(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + (high - low) * u).reshape(shape)

    def normal(self, size=()) -> np.ndarray:
        shape = _as_shape(size)
        n = int(np.prod(shape, dtype=np.int64))
        w = (self.words(2 * n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u1, u2 = w[0::2], w[1::2]
        z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        return z.reshape(shape)

    def integers(self, n: int, size=()) -> np.ndarray:
        """Uniform integers in ``[0, n)`` (modulo reduction)."""
        if n <= 0:
            raise ValueError(f"upper bound must be positive, got {n}")
        shape = _as_shape(size)
        count = int(np.prod(shape, dtype=np.int64))
        return (self.words(count) % np.uint64(n)).astype(np.int64).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        a = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            a[i], a[j] = a[j], a[i]
        return a

    def spawn(self) -> "Rng":
        """Independent child stream seeded from the next word."""
        return Rng(self.next_u64())


def _as_shape(size) -> tuple[int, ...]:
    if isinstance(size, (int, np.integer)):
        return (int(size),)
    return tuple(int(s) for s in size)
