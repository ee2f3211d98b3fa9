"""Selection, mutation, crossover, and fitness-based elitism.

All operators are pure functions of their inputs and an explicit random
generator; the evolution loop calls them single-threaded so a run is fully
reproducible from its seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .population import GENE_COUNT, Genome, GeneRanges, Individual, Population, fitness_rank_key


@dataclass
class OperatorConfig:
    """Variation-operator settings. Tournament size 2, a 50% gene-swap
    probability, and elite count P/2 follow common practice; the noise scale
    and per-gene probabilities are mild defaults, all overridable."""

    tournament_size: int = 2
    mutation_sigma: float = 0.1
    reset_prob: float = 0.05
    per_gene_mutation_prob: float = 0.25
    swap_prob: float = 0.5
    elite_count: int = 20

    def __post_init__(self):
        if self.tournament_size < 2:
            raise ConfigError("tournament_size must be at least 2")
        if self.mutation_sigma <= 0:
            raise ConfigError("mutation_sigma must be positive")
        for name in ("reset_prob", "per_gene_mutation_prob", "swap_prob"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.elite_count < 1:
            raise ConfigError("elite_count must be positive")


def tournament_select(pop: Population, t: int, count: int, rng) -> list[Individual]:
    """Draw `count` parents; each is the fittest of t members sampled without
    replacement (draws are independent across tournaments). Fitness ties go
    to the lower id."""
    members = pop.members
    if not members:
        raise ValueError("cannot select from an empty population")
    if t < 2:
        raise ValueError("tournament size must be at least 2")
    if t > len(members):
        raise ConfigError(f"tournament size {t} exceeds population size {len(members)}")
    if count < 1:
        raise ValueError("count must be positive")
    winners = []
    for _ in range(count):
        draw = rng.choice(len(members), size=t, replace=False)
        winners.append(min((members[i] for i in draw), key=fitness_rank_key))
    return winners


def mutate(genome: Genome, cfg: OperatorConfig, ranges: GeneRanges, rng) -> Genome:
    """Per-gene mutation: reset to a fresh uniform sample with probability
    ``reset_prob``, otherwise multiply by (1 + N(0, sigma^2)) with probability
    ``per_gene_mutation_prob``. A gene sitting exactly at 0 is shifted
    additively instead, since multiplicative noise cannot leave 0. The result
    is clamped to the gene's range."""
    lows, highs = ranges.bounds()
    values = genome.to_vector()
    for i in range(GENE_COUNT):
        if rng.random() < cfg.reset_prob:
            values[i] = rng.uniform(lows[i], highs[i])
        elif rng.random() < cfg.per_gene_mutation_prob:
            noise = rng.normal(0.0, cfg.mutation_sigma)
            values[i] = noise if values[i] == 0.0 else values[i] * (1.0 + noise)
        values[i] = min(max(values[i], lows[i]), highs[i])
    return Genome.from_vector(values)


def crossover(a: Genome, b: Genome, swap_prob: float, rng) -> Genome:
    """Uniform crossover: each gene independently comes from `b` with
    probability `swap_prob`, else from `a`."""
    va = a.to_vector()
    vb = b.to_vector()
    take_b = rng.random(GENE_COUNT) < swap_prob
    return Genome.from_vector(np.where(take_b, vb, va))


def elite_select(pop: Population, k: int) -> list[Individual]:
    """The k highest-fitness members, ties broken by lower id."""
    if k > len(pop.members):
        raise ConfigError(f"elite count {k} exceeds population size {len(pop.members)}")
    return sorted(pop.members, key=fitness_rank_key)[:k]
