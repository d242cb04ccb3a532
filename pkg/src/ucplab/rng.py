"""Counter-based random streams.

Every draw is a pure function of ``(seed, realization_id, site)``: the Philox
counter is set to ``[0, 0, realization_id, 0]`` and site ``j`` takes the first
64-bit word of block ``j``.  Results therefore do not depend on the order in
which realizations are evaluated or on how they are spread over workers.
"""

import numpy as np

_WORDS_PER_BLOCK = 4
_TWO53 = float(2**53)


def philox(seed, realization_id=0):
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, int(realization_id), 0]))


def site_uniforms(seed, realization_id, n_sites):
    """``n_sites`` uniforms in the open interval ``(0, 1)``, one per site."""
    if n_sites == 0:
        return np.zeros(0)
    bg = np.random.Philox(key=int(seed), counter=[0, 0, int(realization_id), 0])
    raw = bg.random_raw(_WORDS_PER_BLOCK * n_sites)[::_WORDS_PER_BLOCK]
    return ((raw >> np.uint64(11)).astype(float) + 0.5) / _TWO53


def child_seed(seed, *labels):
    """Derive an integer seed for an independent stream tagged by ``labels``."""
    ss = np.random.SeedSequence([int(seed)] + [int(x) for x in labels])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))
