"""Counter-based random streams.

Every random quantity in a run is addressed by a key tuple such as
(seed, sweep, step).  A Philox generator is built from that key, so the
numbers drawn for a given unit never depend on how units are split across
workers or on how many draws happened elsewhere in the run.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def _key(seed, keys):
    words = [int(seed) & _MASK64] + [int(k) & _MASK64 for k in keys]
    return np.random.SeedSequence(words).generate_state(2, np.uint64)


def stream(seed, *keys):
    """Generator for the substream addressed by ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(key=_key(seed, keys)))


def open_uniform(rng, size):
    """Uniforms on the open interval (0, 1), safe for inverse-CDF use."""
    k = rng.integers(0, 1 << 53, size=size, dtype=np.int64)
    return (k.astype(np.float64) + 0.5) * 2.0 ** -53


def child_seed(seed, *keys):
    """Derive a 63-bit integer seed, e.g. for Monte Carlo replications."""
    return int(_key(seed, keys)[0] >> np.uint64(1))


def as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
