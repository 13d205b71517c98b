"""SplitMix64 generator used wherever a draw has to be reproducible across
implementations (random splits, bootstrap samples, feature sub-sampling).

The algorithm is tiny and fully specified by its constants, which is the
point: a random split or a forest can be re-derived anywhere from the seed.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

PRNG_NAME = "splitmix64"
PRNG_VERSION = "1"


class SplitMix64:
    """SplitMix64 (Steele, Lea & Flood 2014) over unsigned 64-bit state."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def shuffle(self, items: list) -> list:
        """In-place Fisher-Yates, walking from the last index down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """First ``k`` entries of a partial Fisher-Yates over ``range(n)``."""
        pool = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


def describe() -> dict:
    return {"name": PRNG_NAME, "version": PRNG_VERSION}
