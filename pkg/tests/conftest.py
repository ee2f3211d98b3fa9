"""Shared fixtures and stub evaluators."""

import hashlib

import numpy as np
import pytest

from epbt.data import split as split_dataset
from epbt.data import synth_blobs
from epbt.evolution import EvalResult


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def blob_split():
    """A small well-separated 3-class problem (deterministic)."""
    gen = np.random.default_rng(1234)
    ds = synth_blobs(3, 60, 0.6, gen)
    return split_dataset(ds, 0.2, 0.2, gen)


def genome_hash_unit(genome) -> float:
    """Deterministic pseudo-fitness in [0, 1) from the genome bytes."""
    digest = hashlib.sha256(genome.to_vector().tobytes()).digest()
    return int.from_bytes(digest[:4], "big") / 2**32


def make_hash_stub(behavior_len: int | None = 12):
    """An Evaluator whose fitness is a deterministic hash of the genome.

    Behavior bits also derive from the hash so novelty selection can run.
    Weights stay None and the epoch budget is reported as fully consumed.
    """

    def stub(individual, teacher_weights, epochs, seed) -> EvalResult:
        digest = hashlib.sha256(individual.genome.to_vector().tobytes()).digest()
        fitness = int.from_bytes(digest[:4], "big") / 2**32
        beh = None
        if behavior_len is not None:
            bits = np.frombuffer(digest, dtype=np.uint8)[:behavior_len] % 2
            beh = bits.astype(np.uint8)
        return EvalResult(
            weights=None,
            fitness=fitness,
            behavior=beh,
            test_accuracy=None,
            epochs_consumed=epochs,
        )

    return stub
