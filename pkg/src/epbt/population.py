"""Genomes, individuals, populations, and lineage tracing.

A genome bundles everything evolution is allowed to touch: the eight loss
coefficients plus the learning-rate scale, the learning-rate decay factor,
and the SGD momentum (11 genes as a flat vector). Model weights are opaque
to this module; the trainer owns their representation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ConfigError
from .ioutils import atomic_write_text
from .taylor_loss import PARAM_COUNT, as_params

GENE_COUNT = PARAM_COUNT + 3

GENE_NAMES = tuple(f"theta{i}" for i in range(PARAM_COUNT)) + (
    "lr_scale",
    "lr_decay_factor",
    "momentum",
)


@dataclass
class Genome:
    """The evolvable hyperparameter vector of one individual."""

    theta: np.ndarray
    lr_scale: float
    lr_decay_factor: float
    momentum: float

    def __post_init__(self):
        self.theta = as_params(self.theta)
        if not np.isfinite([self.lr_scale, self.lr_decay_factor, self.momentum]).all():
            raise ValueError("genome fields must be finite")
        if self.lr_scale <= 0:
            raise ValueError("lr_scale must be positive")
        if self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must exceed 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.theta, [self.lr_scale, self.lr_decay_factor, self.momentum]])

    @classmethod
    def from_vector(cls, vec) -> "Genome":
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (GENE_COUNT,):
            raise ValueError(f"expected {GENE_COUNT} genes, got shape {arr.shape}")
        return cls(
            theta=arr[:PARAM_COUNT].copy(),
            lr_scale=float(arr[PARAM_COUNT]),
            lr_decay_factor=float(arr[PARAM_COUNT + 1]),
            momentum=float(arr[PARAM_COUNT + 2]),
        )


def genomes_equal(a: Genome, b: Genome) -> bool:
    """Exact equality; elitism carries genomes over bit-for-bit."""
    return (
        np.array_equal(a.theta, b.theta)
        and a.lr_scale == b.lr_scale
        and a.lr_decay_factor == b.lr_decay_factor
        and a.momentum == b.momentum
    )


def baseline_genome(
    lr_scale: float = 1.0, lr_decay_factor: float = 5.0, momentum: float = 0.9
) -> Genome:
    """The hand-designed SGD configuration as a genome (zero loss coefficients)."""
    return Genome(
        theta=np.zeros(PARAM_COUNT),
        lr_scale=lr_scale,
        lr_decay_factor=lr_decay_factor,
        momentum=momentum,
    )


@dataclass
class GeneRanges:
    """Per-gene uniform sampling intervals (also the clamp bounds for mutation).

    The loss-coefficient interval applies to all eight theta genes. Defaults
    put the hand-designed baseline (scale 1 of base rate 0.1, decay 5,
    momentum 0.9) strictly inside every bracket.
    """

    theta: tuple[float, float] = (-10.0, 10.0)
    lr_scale: tuple[float, float] = (0.001, 1.0)
    lr_decay_factor: tuple[float, float] = (1.5, 10.0)
    momentum: tuple[float, float] = (0.8, 0.99)

    def __post_init__(self):
        for name in ("theta", "lr_scale", "lr_decay_factor", "momentum"):
            low, high = getattr(self, name)
            if not (np.isfinite(low) and np.isfinite(high)) or low > high:
                raise ConfigError(f"invalid {name} range [{low}, {high}]")
        if self.lr_scale[0] <= 0:
            raise ConfigError("lr_scale range must be positive")
        if self.lr_decay_factor[0] <= 1:
            raise ConfigError("lr_decay_factor range must lie above 1")
        if self.momentum[0] < 0 or self.momentum[1] >= 1:
            raise ConfigError("momentum range must lie within [0, 1)")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(lows, highs) arrays over the flat 11-gene vector."""
        lows = np.array([self.theta[0]] * PARAM_COUNT
                        + [self.lr_scale[0], self.lr_decay_factor[0], self.momentum[0]])
        highs = np.array([self.theta[1]] * PARAM_COUNT
                         + [self.lr_scale[1], self.lr_decay_factor[1], self.momentum[1]])
        return lows, highs


def sample_genome(ranges: GeneRanges, rng) -> Genome:
    """Sample every gene independently and uniformly from its range."""
    lows, highs = ranges.bounds()
    return Genome.from_vector(rng.uniform(lows, highs))


@dataclass
class Individual:
    """One population member: genome + weight handle + evaluation results.

    ``fitness`` is validation accuracy in [0, 1] and stays None until the
    first evaluation; comparisons treat None as 0 so unevaluated members
    never win ties against evaluated ones.
    """

    id: int
    genome: Genome
    parent_id: int | None = None
    weights: Any = None
    fitness: float | None = None
    behavior: np.ndarray | None = None
    epochs_trained: int = 0
    test_accuracy: float | None = None

    @property
    def fitness_or_zero(self) -> float:
        return 0.0 if self.fitness is None else self.fitness


def fitness_rank_key(ind: Individual) -> tuple[float, int]:
    """Sort key: higher fitness first, ties broken by lower id."""
    return (-ind.fitness_or_zero, ind.id)


@dataclass
class Population:
    generation: int
    members: list[Individual] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.members)

    def best(self) -> Individual:
        if not self.members:
            raise ValueError("empty population")
        return min(self.members, key=fitness_rank_key)


def init_population(
    pop_size: int,
    ranges: GeneRanges,
    rng,
    next_id: int = 0,
    weight_init: Callable[[Any], Any] | None = None,
) -> Population:
    """Generation-0 population: genomes sampled uniformly, fitness unset.

    Weights stay None unless ``weight_init(rng)`` is given; the training
    evaluator He-initializes missing weights on first evaluation either way.
    """
    if pop_size < 2:
        raise ConfigError("population size must be at least 2")
    members = []
    for i in range(pop_size):
        weights = weight_init(rng) if weight_init is not None else None
        members.append(Individual(id=next_id + i, genome=sample_genome(ranges, rng), weights=weights))
    return Population(generation=0, members=members)


@dataclass
class AncestryRow:
    """One ancestor in a lineage: the generation where it first appeared."""

    generation: int
    id: int
    genome: Genome
    fitness: float | None


def ancestry_rows(history: Sequence, individual_id: int) -> list[AncestryRow]:
    """Trace an individual's parent chain through generation records.

    Returns root-to-leaf order with consecutive duplicate genomes collapsed,
    so an elite that survives unchanged for several generations appears once.
    `history` is a sequence of generation records, each exposing
    ``generation`` and ``members`` with id/parent_id/genome/fitness.
    """
    first_seen: dict[int, tuple[int, Any]] = {}
    for record in history:
        for member in record.members:
            if member.id not in first_seen:
                first_seen[member.id] = (record.generation, member)
    if individual_id not in first_seen:
        raise KeyError(f"unknown individual id {individual_id}")
    chain: list[AncestryRow] = []
    current: int | None = individual_id
    while current is not None:
        if current not in first_seen:
            raise KeyError(f"broken lineage: unknown ancestor id {current}")
        gen, member = first_seen[current]
        chain.append(AncestryRow(gen, member.id, member.genome, member.fitness))
        current = member.parent_id
    chain.reverse()
    deduped = [chain[0]]
    for row in chain[1:]:
        if not genomes_equal(row.genome, deduped[-1].genome):
            deduped.append(row)
    return deduped


def ancestry(history: Sequence, individual_id: int) -> list[Genome]:
    """The genome sequence along an individual's lineage, root to leaf."""
    return [row.genome for row in ancestry_rows(history, individual_id)]


ANCESTRY_CSV_HEADER = (
    "generation,id,"
    + ",".join(f"theta{i}" for i in range(PARAM_COUNT))
    + ",lr_scale,lr_decay,momentum,fitness"
)


def write_ancestry_csv(rows: Sequence[AncestryRow], path: str | Path) -> None:
    lines = [ANCESTRY_CSV_HEADER]
    for row in rows:
        fields = [str(row.generation), str(row.id)]
        fields += [repr(float(v)) for v in row.genome.theta]
        fields += [repr(float(row.genome.lr_scale)), repr(float(row.genome.lr_decay_factor)),
                   repr(float(row.genome.momentum))]
        fields.append("" if row.fitness is None else repr(float(row.fitness)))
        lines.append(",".join(fields))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_ancestry_csv(path: str | Path) -> list[AncestryRow]:
    rows: list[AncestryRow] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if ",".join(header) != ANCESTRY_CSV_HEADER:
            raise ValueError(f"{path}: unexpected ancestry CSV header")
        for rec in reader:
            genome = Genome(
                theta=np.array([float(v) for v in rec[2:2 + PARAM_COUNT]]),
                lr_scale=float(rec[2 + PARAM_COUNT]),
                lr_decay_factor=float(rec[3 + PARAM_COUNT]),
                momentum=float(rec[4 + PARAM_COUNT]),
            )
            fitness = None if rec[5 + PARAM_COUNT] == "" else float(rec[5 + PARAM_COUNT])
            rows.append(AncestryRow(int(rec[0]), int(rec[1]), genome, fitness))
    return rows
