from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from epicode.checkpoint import TensorMap

settings.register_profile("suite", max_examples=50, deadline=None)
settings.load_profile("suite")


class ScriptedProvider:
    """Provider that replays a fixed table of logit rows, one per step.

    The row for a prefix is chosen by how many tokens were generated so far
    (prefix length minus the prompt length), clamped to the last row.
    """

    def __init__(self, rows, prompt_len: int):
        self.rows = [np.asarray(r, dtype=np.float64) for r in rows]
        self.prompt_len = prompt_len

    def next_logits(self, prefix):
        step = min(len(prefix) - self.prompt_len, len(self.rows) - 1)
        return self.rows[step]

    def vocab_size(self) -> int:
        return self.rows[0].shape[0]


class RandomProvider:
    """Pure provider with logits drawn deterministically from the prefix."""

    def __init__(self, vocab: int, seed: int, scale: float = 3.0):
        self.vocab = vocab
        self.seed = seed
        self.scale = scale

    def next_logits(self, prefix):
        key = (self.seed, len(prefix), *[int(t) % 64 for t in prefix[-4:]])
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
        return rng.standard_normal(self.vocab) * self.scale

    def vocab_size(self) -> int:
        return self.vocab


def random_tensor_map(rng: np.random.Generator, n_tensors: int | None = None) -> TensorMap:
    n = n_tensors if n_tensors is not None else int(rng.integers(1, 4))
    tensors = {}
    for i in range(n):
        rank = int(rng.integers(1, 3))
        shape = tuple(int(rng.integers(1, 5)) for _ in range(rank))
        tensors[f"tensor.{i}"] = rng.standard_normal(shape).astype(np.float32)
    return TensorMap(tensors)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
