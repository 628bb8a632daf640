"""Seeded random number generation.

Every stochastic component draws from a Philox counter-based generator
(``numpy.random.Philox``) seeded explicitly. The global numpy RNG is never
touched, so results depend only on the seeds passed in.
"""

import numpy as np


def make_rng(seed, *stream):
    """Return a Philox-backed ``Generator`` for ``seed``.

    Extra integers in ``stream`` select an independent sub-stream, e.g.
    ``make_rng(seed, 1)`` for exploration noise and ``make_rng(seed, 2)``
    for minibatch sampling of the same trial.
    """
    ss = np.random.SeedSequence([int(seed), *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))
