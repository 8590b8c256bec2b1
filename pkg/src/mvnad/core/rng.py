"""PCG32 (XSH-RR, 64-bit state) with the reference seeding procedure."""

from __future__ import annotations

import math

import numpy as np

from mvnad.kernels import pcg32_fill

PCG_MULT = 6364136223846793005
MASK64 = (1 << 64) - 1
_INV32 = 1.0 / 4294967296.0


def mix64(*values: int) -> int:
    """Combine integers into one 64-bit seed (splitmix64 finalizer chain)."""
    h = 0x9E3779B97F4A7C15
    for v in values:
        h = (h ^ (int(v) & MASK64)) & MASK64
        h = (h + 0x9E3779B97F4A7C15) & MASK64
        z = h
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        h = z ^ (z >> 31)
    return h


class Rng:
    """Deterministic PCG32 stream.

    Identical ``(seed, stream)`` pairs yield identical sequences everywhere.
    """

    __slots__ = ("state", "inc")

    def __init__(self, seed: int = 0, stream: int = 0):
        self.inc = ((int(stream) << 1) | 1) & MASK64
        self.state = 0
        self._step()
        self.state = (self.state + (int(seed) & MASK64)) & MASK64
        self._step()

    def _step(self) -> None:
        self.state = (self.state * PCG_MULT + self.inc) & MASK64

    def next_u32(self) -> int:
        old = self.state
        self._step()
        xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & 0xFFFFFFFF

    def uniform(self) -> float:
        """Uniform in [0, 1)."""
        return self.next_u32() * _INV32

    def gaussian(self) -> float:
        """Standard normal via Box-Muller on two successive uniforms (cosine branch)."""
        u1 = (self.next_u32() + 1.0) * _INV32  # (0, 1]
        u2 = self.next_u32() * _INV32
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def u32_array(self, n: int) -> np.ndarray:
        out, self.state = pcg32_fill(self.state, self.inc, int(n))
        return out

    def uniform_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return (self.u32_array(n).astype(np.float64) * _INV32).reshape(shape)

    def gaussian_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        raw = self.u32_array(2 * n).astype(np.float64)
        u1 = (raw[0::2] + 1.0) * _INV32
        u2 = raw[1::2] * _INV32
        return (np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)).reshape(shape)

    def randint(self, n: int) -> int:
        """Integer in [0, n) by rejection, unbiased."""
        if n <= 0:
            raise ValueError("n must be positive")
        threshold = (-n) % (1 << 32) % n
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % n

    def spawn(self, *keys: int) -> "Rng":
        """Independent child stream keyed by ``keys`` (does not advance self)."""
        return Rng(mix64(self.state, *keys), mix64(self.inc, *keys))


def rng_next(rng: Rng) -> int:
    return rng.next_u32()


def rng_gaussian(rng: Rng) -> float:
    return rng.gaussian()
