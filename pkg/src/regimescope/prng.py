"""Named, independent random streams backed by the Philox counter generator.

Every stochastic consumer in a run (parameter init, batch shuffling,
dropout masks, probe-set selection, synthetic data, probe directions)
draws from its own stream so that enabling or disabling one consumer
never perturbs the others.  Streams are derived from (root seed, stream
id) through numpy's SeedSequence, which is stable across platforms, and
Philox itself is counter-based, so the whole scheme is reproducible
bit-for-bit given the same numpy version.
"""

import numpy as np

# Stable stream ids.  Appending is fine; renumbering breaks reproducibility.
STREAM_IDS = {
    "init": 1,
    "shuffle": 2,
    "dropout": 3,
    "probe": 4,
    "data": 5,
    "split": 6,
    "directions": 7,
    "anchors": 8,
}


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the named stream for a root seed.

    Each call returns a fresh generator positioned at the start of the
    stream; callers own its state from then on.
    """
    try:
        sid = STREAM_IDS[name]
    except KeyError:
        raise ValueError(f"unknown stream name: {name!r}") from None
    ss = np.random.SeedSequence(entropy=(int(seed), sid))
    return np.random.Generator(np.random.Philox(seed=ss))
