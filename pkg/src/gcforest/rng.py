"""Seed derivation shared by every randomized component.

All per-tree, per-fold and per-level seeds come from one fixed 64-bit mix
(splitmix64), so a trained model is reproducible bit for bit on any platform
and independent of how work is scheduled across threads.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """Finalizer of the splitmix64 generator, applied to ``x`` mod 2**64."""
    z = x & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, n: int) -> int:
    """Return the n-th output of the splitmix64 stream seeded with ``seed``.

    Equals ``splitmix64(seed + (n + 1) * GOLDEN_GAMMA)``; the same stream is
    reproduced incrementally inside the numba kernels.
    """
    if n < 0:
        raise ValueError(f"stream index must be >= 0, got {n}")
    return splitmix64(seed + (n + 1) * GOLDEN_GAMMA)
