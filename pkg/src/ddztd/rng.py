"""Deterministic, language-neutral random streams.

Every stochastic routine in the package takes an explicit ``numpy.random.Generator``.
Generators come from :func:`rng_stream`, which is defined so that any language can
reproduce the raw 64-bit stream:

1. A SplitMix64 sequence is seeded with
   ``(seed + (stream_id + 1) * 0xD1B54A32D192ED03) mod 2**64``.
2. Its first four outputs ``w0..w3`` initialise a PCG64 (XSL-RR 128/64) generator:
   ``state = w0 << 64 | w1`` and ``inc = (w2 << 64 | w3) | 1``.

Distinct ``stream_id`` values give independent substreams, so results do not depend on
how work is split across workers.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_STREAM_GAMMA = 0xD1B54A32D192ED03


class SplitMix64:
    """Reference SplitMix64 (Steele, Lea & Flood, 2014)."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def take(self, n: int) -> list[int]:
        return [self.next_u64() for _ in range(n)]


def substream_seed(seed: int, stream_id: int) -> int:
    return (int(seed) + (int(stream_id) + 1) * _STREAM_GAMMA) & MASK64


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return the generator for substream ``stream_id`` of ``seed``."""
    if not 0 <= int(seed) <= MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
    w0, w1, w2, w3 = SplitMix64(substream_seed(seed, stream_id)).take(4)
    bitgen = np.random.PCG64()
    bitgen.state = {
        "bit_generator": "PCG64",
        "state": {"state": (w0 << 64) | w1, "inc": ((w2 << 64) | w3) | 1},
        "has_uint32": 0,
        "uinteger": 0,
    }
    return np.random.Generator(bitgen)


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed from ``rng`` (for handing a fresh stream to a sub-task)."""
    return int(rng.integers(0, 2**63 - 1))
