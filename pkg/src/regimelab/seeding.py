"""Deterministic seed derivation.

Every stochastic component takes an explicit integer seed and builds its own
``numpy.random.Generator``; nothing touches global RNG state. Sub-streams
(episodes, deployment steps, per-window updates) derive their seeds from a
root seed with a stateless splitting rule so runs are reproducible and
episodes can execute in any order:

    child_seed = splitmix64(root XOR splitmix64(index))

splitmix64 is the standard 64-bit finalizer; it scrambles the index so
neighbouring indices land in unrelated parts of the seed space.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 scramble step (Steele et al. finalizer constants)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_seed(root: int, index: int) -> int:
    """Child seed for sub-stream `index` under `root`. Stateless."""
    if index < 0:
        raise ValueError(f"stream index must be >= 0, got {index}")
    return splitmix64((int(root) & _MASK64) ^ splitmix64(int(index)))


def rng_for(root: int, index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, index))
