"""Deterministic 64-bit pseudo-random streams for world sampling and seeding.

World sampling uses SplitMix64 to derive per-world seeds and to expand them
into xoshiro256++ state.  Both algorithms are pure 64-bit integer arithmetic,
so the same (master_seed, index) pair reproduces bit-identical worlds on any
platform, independent of numpy, call order, or thread count.
"""

MASK64 = (1 << 64) - 1

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(seed: int, index: int) -> int:
    """index-th output of the SplitMix64 stream whose state starts at seed."""
    z = (seed + (index + 1) * _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return (z ^ (z >> 31)) & MASK64


def mix_key(*parts: int) -> int:
    """Fold integers into one 64-bit key (order-sensitive).

    Used to derive world-choice and episode seeds from tuples such as
    (run_seed, update, worker, episode) without any shared mutable state.
    """
    h = 0
    for p in parts:
        h = splitmix64(h, p & MASK64)
    return h


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256pp:
    """xoshiro256++ generator, state seeded via SplitMix64 expansion."""

    def __init__(self, seed: int):
        self.state = [splitmix64(seed & MASK64, i) for i in range(4)]

    def next_u64(self) -> int:
        s = self.state
        result = (_rotl((s[0] + s[3]) & MASK64, 23) + s[0]) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform double in [lo, hi) from the top 53 bits of one output."""
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return lo + (hi - lo) * u

    def choice_index(self, n: int) -> int:
        """Uniform integer in [0, n) (modulo reduction; bias < 2**-40 for desk-scale n)."""
        return self.next_u64() % n
