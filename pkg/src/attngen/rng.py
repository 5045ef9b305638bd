"""Portable xoshiro256++ generator.

Every stochastic stage (splits, shuffles, synthesis, dropout, random masks,
initialisation) draws from this generator so that a port in another language
can reproduce the exact streams.

Algorithm
---------
* State: four 64-bit words, filled by splitmix64 starting at ``seed``.
* Output: ``rotl(s0 + s3, 23) + s0`` (xoshiro256++, Blackman & Vigna).
* ``random()``: ``(next_u64() >> 11) * 2**-53``.
* ``below(n)``: rejection sampling; draws ``r`` until ``r >= (2**64 - n) % n``
  and returns ``r % n``.
* ``permutation(n)``: Fisher-Yates, ``i`` from ``n-1`` down to ``1``,
  swapping ``a[i]`` with ``a[below(i + 1)]``.
* ``nucleotides(n)``: each 64-bit output supplies 32 two-bit values, least
  significant pair first; a value ``v`` maps to token ``v + 1``.
* ``derive_seed(seed, *keys)``: folds each key into the seed with one
  splitmix64 round per key (``z = splitmix64(z ^ key)``).
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def _splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Mix integer ``keys`` into ``seed`` to obtain an independent stream seed."""
    z = seed & MASK64
    for key in keys:
        _, z = _splitmix64(z ^ (key & MASK64))
    return z


class Xoshiro256pp:
    def __init__(self, seed: int = 42):
        self.seed(seed)

    def seed(self, seed: int) -> None:
        sm = seed & MASK64
        words = []
        for _ in range(4):
            sm, z = _splitmix64(sm)
            words.append(z)
        self._s = words

    @classmethod
    def from_keys(cls, seed: int, *keys: int) -> "Xoshiro256pp":
        return cls(derive_seed(seed, *keys))

    # state is exposed so checkpoints can persist and restore it
    def get_state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    def set_state(self, state) -> None:
        state = [int(w) & MASK64 for w in state]
        if len(state) != 4 or not any(state):
            raise ValueError("xoshiro256++ state must be four words, not all zero")
        self._s = state

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        t = (s0 + s3) & MASK64
        result = (((t << 23) | (t >> 41)) + s0) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & MASK64
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def random_array(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        nxt = self.next_u64
        for i in range(n):
            out[i] = (nxt() >> 11) * (1.0 / 9007199254740992.0)
        return out

    def uniform(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.random_array(n)

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("bound must be positive")
        threshold = ((1 << 64) - n) % n
        while True:
            r = self.next_u64()
            if r >= threshold:
                return r % n

    def permutation(self, n: int) -> np.ndarray:
        a = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            a[i], a[j] = a[j], a[i]
        return np.asarray(a, dtype=np.int64)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """First ``k`` entries of a Fisher-Yates permutation of ``range(n)``."""
        return self.permutation(n)[:k]

    def nucleotides(self, n: int) -> np.ndarray:
        """``n`` tokens uniform over {1, 2, 3, 4}."""
        out = np.empty(n, dtype=np.int64)
        i = 0
        while i < n:
            word = self.next_u64()
            for _ in range(min(32, n - i)):
                out[i] = (word & 3) + 1
                word >>= 2
                i += 1
        return out
