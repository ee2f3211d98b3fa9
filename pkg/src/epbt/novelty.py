"""Behavior characterization, novelty scoring, and pulsation scheduling.

An individual's behavior is the binary correctness vector of its model over
a fixed probe subset of the validation set. Novelty of a candidate within a
set is the sum of Hamming distances from its behavior vector to every other
candidate's. Pulsation alternates elite selection between plain fitness
ranking and the novelty-augmented procedure in fixed-length blocks of
generations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .population import Individual, Population, fitness_rank_key


@dataclass
class PulsationConfig:
    """Pulsation settings: block length, expanded elite pool size m (> elite
    count k, nominally 3k/2), and the probe subset size."""

    period: int = 5
    elite_pool: int = 30
    probe_size: int = 400

    def __post_init__(self):
        if self.period < 1:
            raise ConfigError("pulsation period must be at least 1")
        if self.elite_pool < 2:
            raise ConfigError("elite pool size must be at least 2")
        if self.probe_size < 1:
            raise ConfigError("probe size must be positive")


def behavior(predictions, truth) -> np.ndarray:
    """Bit i is 1 iff prediction i matches truth i."""
    p = np.asarray(predictions)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError(f"prediction/truth length mismatch: {p.shape} vs {t.shape}")
    return (p == t).astype(np.uint8)


def novelty_scores(behaviors) -> np.ndarray:
    """Sum of pairwise Hamming distances from each vector to all others.

    The self term contributes 0; a single vector scores [0].
    """
    vectors = [np.asarray(b) for b in behaviors]
    if not vectors:
        raise ValueError("need at least one behavior vector")
    length = vectors[0].shape
    if any(v.shape != length for v in vectors):
        raise ValueError("behavior vectors must all have the same length")
    stacked = np.stack(vectors).astype(np.int16)
    pairwise = (stacked[:, None, :] != stacked[None, :, :]).sum(axis=2)
    return pairwise.sum(axis=1).astype(np.int64)


def novelty_elite_select(pop: Population, k: int, m: int) -> list[Individual]:
    """Novelty-filtered elitism.

    Take the top m members by fitness, rank them by descending novelty score
    within that set (ties: higher fitness, then lower id), then greedily keep
    k, skipping any candidate whose behavior vector exactly matches one
    already kept. If the skips leave fewer than k, the remainder is filled
    from the skipped candidates in ranked order.
    """
    if m > len(pop.members):
        raise ConfigError(f"elite pool {m} exceeds population size {len(pop.members)}")
    if k > m:
        raise ConfigError(f"elite count {k} exceeds elite pool {m}")
    candidates = sorted(pop.members, key=fitness_rank_key)[:m]
    for cand in candidates:
        if cand.behavior is None:
            raise ValueError(f"individual {cand.id} has no behavior vector")
    scores = novelty_scores([c.behavior for c in candidates])
    order = sorted(
        range(len(candidates)),
        key=lambda i: (-scores[i], -candidates[i].fitness_or_zero, candidates[i].id),
    )
    selected: list[int] = []
    skipped: list[int] = []
    for i in order:
        if len(selected) == k:
            break
        duplicate = any(
            np.array_equal(candidates[i].behavior, candidates[j].behavior) for j in selected
        )
        if duplicate:
            skipped.append(i)
        else:
            selected.append(i)
    for i in skipped:
        if len(selected) == k:
            break
        selected.append(i)
    return [candidates[i] for i in selected]


def pulsation_active(generation: int, period: int) -> bool:
    """True when the novelty-augmented mode is on for this generation.

    Generations 0..period-1 use plain fitness elitism, the next `period`
    generations use novelty selection, and so on alternating.
    """
    if period < 1:
        raise ValueError("period must be at least 1")
    return (generation // period) % 2 == 1
