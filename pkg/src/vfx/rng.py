"""Counter-based random streams keyed by integer tuples.

Every stream is a Philox generator whose key is derived from
``(seed, purpose, index, ...)``, so draws do not depend on the order in
which streams are consumed or on how work is split across processes.
"""

import numpy as np

# stream purposes; keep values stable, they are part of the reproducibility contract
MEASURE = 1
PATH = 2
START_VECTOR = 3
RANDOM_VECTOR = 4
MONTE_CARLO = 5


def stream(seed, purpose, *index):
    if seed < 0:
        raise ValueError("seed must be non-negative")
    entropy = [int(seed), int(purpose), *(int(i) for i in index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def complex_normal(rng, size):
    """Standard complex Gaussians, E|g|^2 = 1 with independent real and imaginary parts."""
    shape = (size,) if np.isscalar(size) else tuple(size)
    pair = rng.standard_normal(size=(*shape, 2))
    return (pair[..., 0] + 1j * pair[..., 1]) / np.sqrt(2.0)
