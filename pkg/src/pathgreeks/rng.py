"""Counter-based random streams for reproducible parallel simulation.

Paths are generated in fixed-size blocks. Block ``b`` covers path indices
``[b * block_size, (b + 1) * block_size)`` and draws from a Philox stream
whose key comes from the master seed and whose counter is offset by the
block's first path index. Output therefore depends on
``(seed, block_size)`` only, never on how blocks are spread over threads.
"""
from __future__ import annotations

import numpy as np

DEFAULT_BLOCK_SIZE = 2048


def philox_key(seed: int, *salt: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed) & (2**63 - 1), *[int(s) for s in salt]]).generate_state(
        2, dtype=np.uint64
    )


def block_generator(seed: int, first_path: int, *salt: int) -> np.random.Generator:
    """Generator for the block starting at path index ``first_path``."""
    counter = np.array([0, 0, 0, first_path], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=philox_key(seed, *salt), counter=counter))


def block_ranges(n_paths: int, block_size: int = DEFAULT_BLOCK_SIZE) -> list[tuple[int, int]]:
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    return [(start, min(start + block_size, n_paths)) for start in range(0, n_paths, block_size)]


def derive_seed(seed: int, *salt: int) -> int:
    """Independent 63-bit seed for a sub-experiment labelled by ``salt``."""
    state = np.random.SeedSequence([int(seed) & (2**63 - 1), *[int(s) for s in salt]]).generate_state(
        1, dtype=np.uint64
    )
    return int(state[0] >> np.uint64(1))
