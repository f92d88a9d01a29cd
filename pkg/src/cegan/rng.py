"""Seedable, splittable random streams.

Every stochastic draw in the package (subnetwork noise, dropout masks,
minibatch sampling, data-generator noise) goes through an :class:`RngStream`.
Streams are backed by the counter-based Philox engine keyed through
``numpy.random.SeedSequence``, so

* the same ``(seed, path)`` always reproduces the same sequence, on any
  platform, and
* child streams derived from ``(seed, index)`` are independent by
  construction, which lets many experiment realizations run concurrently
  without sharing state.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "philox4x64"


class RngStream:
    """A deterministic random stream addressed by (seed, path).

    ``child(i)`` derives an independent stream without consuming any state
    from the parent, so the tree of streams used by an experiment is a pure
    function of the master seed.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(seq))

    @property
    def algorithm(self) -> str:
        return ALGORITHM

    @property
    def stream_id(self) -> str:
        return f"{ALGORITHM}:{self.seed}:{','.join(map(str, self.path))}"

    def child(self, index: int) -> "RngStream":
        """Derive an independent stream; does not advance this stream."""
        return RngStream(self.seed, self.path + (int(index),))

    def fork(self) -> "RngStream":
        """A fresh stream at the same address, rewound to the start."""
        return RngStream(self.seed, self.path)

    # -- draws ------------------------------------------------------------

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size=size, dtype=np.float64)

    def uniform(self, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def bernoulli(self, p, size) -> np.ndarray:
        """0/1 float draws; `p` may be scalar or an array broadcast to `size`."""
        return (self._gen.uniform(0.0, 1.0, size=size) < p).astype(np.float64)

    def integers(self, low: int, high: int, size) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(seed={self.seed}, path={self.path})"


def derive_seed(master_seed: int, *indices: int) -> int:
    """A plain integer seed derived from (master seed, index path).

    Used where a config object wants an integer seed of its own (e.g. one
    generator realization inside a sweep) rather than a stream handle.
    """
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(i) for i in indices))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
