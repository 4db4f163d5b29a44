import hashlib
import json
import math
from typing import Any, Union

import numpy as np

Seed = Union[int, np.random.SeedSequence]

def stable_id(*parts: Any) -> int:
    content = json.dumps(parts, sort_keys=True, default=str)
    return int(hashlib.sha256(content.encode("utf-8")).hexdigest()[:8], 16)

def seed_sequence(seed: Seed, *keys: int) -> np.random.SeedSequence:
    """Derive the stream (seed, *keys); equal inputs give equal streams on any worker."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(
            entropy=seed.entropy,
            spawn_key=tuple(seed.spawn_key) + tuple(int(k) for k in keys),
        )
    if int(seed) < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))

def rng_stream(seed: Seed, *keys: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *keys))

def as_generator(seed: Union[Seed, np.random.Generator]) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return rng_stream(seed)

def ceil_count(value: float) -> int:
    # guards 8.000000000001 -> 9 from float noise in the budget formulas
    return max(0, int(math.ceil(value - 1e-9)))
