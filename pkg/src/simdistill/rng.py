"""Seeded, splittable random number streams.

Every stochastic entry point in this package takes an explicit
``numpy.random.Generator``. Streams are derived from a root seed with
``SeedSequence.spawn`` so that sub-tasks (phases, evaluations, checks) get
independent, reproducible streams. The bit generator is PCG64; its name and
the root seed are echoed in every serialized report so a run can be replayed
bit for bit.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "pcg64"


def make_rng(seed: int) -> np.random.Generator:
    """Root generator for a given integer seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def split(seed: int, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent child generators from a root seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def named_streams(seed: int, names: list[str]) -> dict[str, np.random.Generator]:
    """Map stream names to independent generators, in name order."""
    return dict(zip(names, split(seed, len(names))))
