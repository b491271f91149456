"""Splittable seeding: every random draw is keyed by (seed, purpose)."""

import numpy as np

CHANNEL = 0
TRAINING_NOISE = 1
DATA_BITS = 2
DATA_NOISE = 3


def as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def stream(seed: int, purpose: int) -> np.random.Generator:
    """Independent generator for one purpose of one trial."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose,)))


def trial_seed(global_seed: int, snr_index: int, trial_index: int) -> int:
    # policy is deliberately not part of the key: both policies see the same
    # channel, pilot noise, bits and data noise for a given trial index
    ss = np.random.SeedSequence(global_seed, spawn_key=(snr_index, trial_index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def crandn(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples CN(0, variance)."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
