"""Counter-based random streams.

A draw is addressed by (seed, purpose, step) plus the datapoint index and
the trailing sample layout, so results do not depend on the order in which
datapoints are visited or on which minibatch they land in.
"""

from __future__ import annotations

import zlib

import numpy as np
import torch

from .gauss import DTYPE


def _purpose_id(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


class CounterRNG:
    def __init__(self, seed: int):
        self.seed = int(seed)

    def generator(self, purpose: str, step: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed, _purpose_id(purpose), int(step)])
        return np.random.Generator(np.random.Philox(ss))

    def normal(self, purpose: str, step: int, index, shape=()) -> torch.Tensor:
        """Standard normals of shape (len(index), *shape); row i belongs to datapoint index[i]."""
        index = np.asarray(index, dtype=np.int64).reshape(-1)
        shape = tuple(int(s) for s in shape)
        if index.size == 0:
            return torch.zeros((0,) + shape, dtype=DTYPE)
        if index.min() < 0:
            raise IndexError("datapoint indices must be nonnegative")
        table = self.generator(purpose, step).standard_normal((int(index.max()) + 1,) + shape)
        return torch.as_tensor(table[index], dtype=DTYPE)

    def stream(self, step: int) -> "Stream":
        return Stream(self, step)


class Stream:
    """A CounterRNG pinned to one optimizer step."""

    def __init__(self, rng: CounterRNG, step: int):
        self.rng = rng
        self.step = int(step)

    def normal(self, purpose: str, index, shape=()) -> torch.Tensor:
        return self.rng.normal(purpose, self.step, index, shape)
