"""Stable sub-seed derivation.

Each stage of a run asks for its own seed by label (``"init"``,
``"shuffle:3"``, ``"noise"``, ``"perturb:7"``), so changing how one stage
consumes randomness never shifts another stage's stream.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, label))
