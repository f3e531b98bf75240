"""Small, fully specified 64-bit generators.

Splits and the random-placement predictor must be reproducible by any
implementation, so they do not go through numpy's bit generators. Both use
SplitMix64 (Steele, Lea & Flood 2014):

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

all arithmetic modulo 2**64.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 finalizer applied to a 64-bit word."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection (no modulo bias)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % bound

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, walking from the last slot down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def counter_uniform(seed: int, *counters: int) -> float:
    """Uniform double in [0, 1) that depends only on (seed, counters).

    Each counter is folded in with one SplitMix64 round; the top 53 bits of
    the final word become the mantissa.
    """
    h = mix64((seed & MASK64) + GOLDEN_GAMMA)
    for c in counters:
        h = mix64((h ^ (c & MASK64)) + GOLDEN_GAMMA)
    return (h >> 11) * (1.0 / (1 << 53))
