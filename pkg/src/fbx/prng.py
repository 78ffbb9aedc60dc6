"""Deterministic 64-bit PRNG (splitmix64).

The whole toolchain draws randomness from this one generator so that a
campaign is a pure function of its seed.  splitmix64 reference: seed 0
produces 0xE220A8397B1DCDAF as its first output.
"""

from __future__ import annotations

M64 = (1 << 64) - 1


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance one splitmix64 step; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & M64
    z = state
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & M64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & M64
    z ^= z >> 31
    return state, z


class Prng:
    """Stateful splitmix64 stream."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & M64

    def next(self) -> int:
        self.state, z = splitmix64_next(self.state)
        return z

    def below(self, n: int) -> int:
        """Uniform-ish draw in [0, n) by modulo; n must be positive."""
        return self.next() % n
