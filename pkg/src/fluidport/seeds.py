"""Named sub-seed derivation so one --seed drives every random stream.

Each consumer asks for a generator under a stream label plus integer
qualifiers (UE index, segment index, ...).  Labels keep the streams
independent: changing how many draws one stream makes never perturbs
another.
"""

import numpy as np

_LABELS = {
    "trajectory": 1,
    "split": 2,
    "model-init": 3,
    "shuffle": 4,
    "eval": 5,
}


def rng_for(seed: int, stream: str, *key: int) -> np.random.Generator:
    """Generator for (seed, stream, *key); deterministic and order-free."""
    try:
        label = _LABELS[stream]
    except KeyError:
        raise ValueError(f"unknown seed stream {stream!r}") from None
    entropy = (int(seed), label) + tuple(int(k) for k in key)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def torch_seed_for(seed: int, stream: str, *key: int) -> int:
    """Stable 63-bit integer for torch.manual_seed under the same naming."""
    return int(rng_for(seed, stream, *key).integers(0, 2**63 - 1))
