"""Seedable, splittable random number generation.

A single master seed owns every stochastic choice in a run. Components
(parameter init, dropout, batch shuffling, folds, ...) each get their own
generator derived from the master seed plus an integer stream key, so
adding draws to one component never perturbs another.
"""

import numpy as np


def rng_for(seed, *stream):
    """Generator for a named stream under a master seed.

    ``stream`` is a tuple of small integers identifying the component,
    e.g. ``rng_for(seed, FOLD, fold_index)``.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.default_rng(ss)


# Stream keys, one per stochastic component.
INIT = 0
DROPOUT = 1
SHUFFLE = 2
FOLDS = 3
SYNTH = 4
