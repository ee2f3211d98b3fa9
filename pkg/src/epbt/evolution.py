"""The generational loop and the two reference baselines.

Each generation: tournament-select parents, mutate then cross their genomes,
hand children the parent weights unchanged, train/evaluate the children in
parallel (teacher = best member of the previous generation when distillation
is on), and carry the elites over untouched. Elites keep their weights,
fitness, and behavior frozen until they are selected as parents.

Evaluation is abstracted behind a callable so the loop can be driven by the
real trainer or by stubs in tests:

    evaluator(individual, teacher_weights, epochs, seed) -> EvalResult

Evaluators must be deterministic given their arguments; the loop derives a
stable per-evaluation seed from (run seed, generation, individual id) and
merges results in member order, so worker count never changes a run.
"""

from __future__ import annotations

import copy
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .data import Dataset, Split
from .errors import ConfigError
from .genetic_ops import OperatorConfig, crossover, elite_select, mutate, tournament_select
from .novelty import PulsationConfig, behavior, novelty_elite_select, pulsation_active
from .population import (
    Genome,
    GeneRanges,
    Individual,
    Population,
    baseline_genome,
    fitness_rank_key,
    init_population,
)
from .trainer import (
    MlpArchitecture,
    SgdConfig,
    Weights,
    evaluate_accuracy,
    he_init,
    predict_labels,
    train_epochs,
)

log = logging.getLogger(__name__)

STRATEGIES = ("epbt", "pbt_baseline", "sgd_baseline")

PBT_PERTURB_FACTOR = 1.2


@dataclass
class EvolutionConfig:
    population_size: int = 40
    generations: int = 25
    elite_count: int = 20
    epochs_per_generation: int = 8
    operators: OperatorConfig = field(default_factory=OperatorConfig)
    ranges: GeneRanges = field(default_factory=GeneRanges)
    pulsation: PulsationConfig | None = None
    distill_alpha: float | None = None
    seed: int = 0
    workers: int = 1
    strategy: str = "epbt"

    def validate(self) -> None:
        if self.population_size < 2:
            raise ConfigError("population_size must be at least 2")
        if self.generations < 1:
            raise ConfigError("generations must be at least 1")
        if not 1 <= self.elite_count < self.population_size:
            raise ConfigError("elite_count must satisfy 1 <= k < population_size")
        if self.epochs_per_generation < 1:
            raise ConfigError("epochs_per_generation must be at least 1")
        if self.operators.tournament_size > self.population_size:
            raise ConfigError("tournament_size cannot exceed population_size")
        if self.pulsation is not None:
            if self.pulsation.elite_pool <= self.elite_count:
                raise ConfigError("pulsation elite_pool must exceed elite_count")
            if self.pulsation.elite_pool > self.population_size:
                raise ConfigError("pulsation elite_pool cannot exceed population_size")
        if self.distill_alpha is not None and not 0 <= self.distill_alpha <= 1:
            raise ConfigError("distill_alpha must lie in [0, 1] (or be null to disable)")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")


@dataclass
class EvalResult:
    """What an evaluator reports back for one individual."""

    weights: Any
    fitness: float
    behavior: np.ndarray | None = None
    test_accuracy: float | None = None
    epochs_consumed: int = 0
    diverged: bool = False


Evaluator = Callable[[Individual, Any, int, int], EvalResult]


@dataclass
class RunCounters:
    """Evaluation bookkeeping.

    ``epochs_trained`` counts epochs actually run by evaluators;
    ``epochs_accounted`` is the population budget (population size x epochs
    per generation, every generation), the figure used when comparing
    compute against a single-model run.
    """

    genomes_evaluated: int = 0
    epochs_trained: int = 0
    epochs_accounted: int = 0


@dataclass
class MemberRecord:
    id: int
    parent_id: int | None
    genome: Genome
    fitness: float
    test_accuracy: float | None
    epochs_trained: int
    elite: bool


@dataclass
class GenerationRecord:
    """One generation's log entry. Wall time is kept for summaries but is
    deliberately excluded from the serialized form so identical runs produce
    identical logs."""

    generation: int
    novelty_elites: bool
    best_fitness: float
    median_fitness: float
    best_id: int
    members: list[MemberRecord]
    wall_time_s: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "generation": self.generation,
            "novelty_elites": self.novelty_elites,
            "best_fitness": self.best_fitness,
            "median_fitness": self.median_fitness,
            "best_id": self.best_id,
            "members": [
                {
                    "id": m.id,
                    "parent_id": m.parent_id,
                    "theta": [float(v) for v in m.genome.theta],
                    "lr_scale": m.genome.lr_scale,
                    "lr_decay_factor": m.genome.lr_decay_factor,
                    "momentum": m.genome.momentum,
                    "fitness": m.fitness,
                    "test_accuracy": m.test_accuracy,
                    "epochs_trained": m.epochs_trained,
                    "elite": m.elite,
                }
                for m in self.members
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GenerationRecord":
        members = [
            MemberRecord(
                id=m["id"],
                parent_id=m["parent_id"],
                genome=Genome(
                    theta=np.asarray(m["theta"], dtype=np.float64),
                    lr_scale=m["lr_scale"],
                    lr_decay_factor=m["lr_decay_factor"],
                    momentum=m["momentum"],
                ),
                fitness=m["fitness"],
                test_accuracy=m["test_accuracy"],
                epochs_trained=m["epochs_trained"],
                elite=m["elite"],
            )
            for m in d["members"]
        ]
        return cls(
            generation=d["generation"],
            novelty_elites=d["novelty_elites"],
            best_fitness=d["best_fitness"],
            median_fitness=d["median_fitness"],
            best_id=d["best_id"],
            members=members,
        )


@dataclass
class RunState:
    """Everything needed to continue a run: the live population, the records
    so far, the loop RNG, counters, and the id counter."""

    population: Population
    records: list[GenerationRecord]
    rng: np.random.Generator
    counters: RunCounters
    next_id: int


@dataclass
class RunResult:
    records: list[GenerationRecord]
    counters: RunCounters
    population: Population

    @property
    def best(self) -> Individual:
        return self.population.best()


def eval_seed(run_seed: int, generation: int, individual_id: int) -> int:
    """Stable per-evaluation seed, independent of worker scheduling."""
    seq = np.random.SeedSequence([run_seed, generation, individual_id])
    return int(seq.generate_state(1, np.uint64)[0])


def _copy_weights(weights: Any) -> Any:
    if weights is None:
        return None
    if hasattr(weights, "copy"):
        return weights.copy()
    return copy.deepcopy(weights)


def _failure_result(individual: Individual, cfg: EvolutionConfig) -> EvalResult:
    probe = cfg.pulsation.probe_size if cfg.pulsation is not None else None
    beh = np.zeros(probe, dtype=np.uint8) if probe is not None else None
    return EvalResult(
        weights=individual.weights,
        fitness=0.0,
        behavior=beh,
        test_accuracy=None,
        epochs_consumed=0,
        diverged=True,
    )


def _evaluate_round(
    members: Sequence[Individual],
    teacher_weights: Any,
    cfg: EvolutionConfig,
    generation: int,
    evaluator: Evaluator,
    counters: RunCounters,
) -> None:
    """Evaluate members concurrently and merge results back in member order."""

    def run_one(member: Individual) -> EvalResult:
        seed = eval_seed(cfg.seed, generation, member.id)
        try:
            return evaluator(member, teacher_weights, cfg.epochs_per_generation, seed)
        except Exception:
            log.exception("evaluation failed for individual %d; recording fitness 0", member.id)
            return _failure_result(member, cfg)

    if cfg.workers > 1 and len(members) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run_one, members))
    else:
        results = [run_one(m) for m in members]

    for member, result in zip(members, results):
        member.weights = result.weights
        member.fitness = 0.0 if result.diverged else float(result.fitness)
        member.behavior = result.behavior
        member.test_accuracy = result.test_accuracy
        member.epochs_trained += result.epochs_consumed
        counters.genomes_evaluated += 1
        counters.epochs_trained += result.epochs_consumed


def _make_record(
    generation: int,
    population: Population,
    novelty_used: bool,
    elite_ids: set[int],
    wall_time_s: float,
) -> GenerationRecord:
    fitnesses = [m.fitness_or_zero for m in population.members]
    best = population.best()
    members = [
        MemberRecord(
            id=m.id,
            parent_id=m.parent_id,
            genome=m.genome,
            fitness=m.fitness_or_zero,
            test_accuracy=m.test_accuracy,
            epochs_trained=m.epochs_trained,
            elite=m.id in elite_ids,
        )
        for m in population.members
    ]
    return GenerationRecord(
        generation=generation,
        novelty_elites=novelty_used,
        best_fitness=max(fitnesses),
        median_fitness=float(np.median(fitnesses)),
        best_id=best.id,
        members=members,
        wall_time_s=wall_time_s,
    )


def _teacher_weights(cfg: EvolutionConfig, population: Population) -> Any:
    if cfg.distill_alpha is None:
        return None
    return population.best().weights


def run_epbt(
    cfg: EvolutionConfig,
    evaluator: Evaluator,
    *,
    on_generation: Callable[[RunState], None] | None = None,
    state: RunState | None = None,
) -> RunResult:
    """Run the full evolutionary training loop and return one record per
    generation. Pass a previously checkpointed `state` to continue a run."""
    cfg.validate()
    if state is None:
        rng = np.random.default_rng(cfg.seed)
        population = init_population(cfg.population_size, cfg.ranges, rng)
        state = RunState(population, [], rng, RunCounters(), next_id=cfg.population_size)

    if not state.records:
        started = time.perf_counter()
        _evaluate_round(state.population.members, None, cfg, 0, evaluator, state.counters)
        state.counters.epochs_accounted += cfg.population_size * cfg.epochs_per_generation
        state.records.append(
            _make_record(0, state.population, False, set(), time.perf_counter() - started)
        )
        log.info("generation 0: best fitness %.4f", state.records[-1].best_fitness)
        if on_generation is not None:
            on_generation(state)

    ops = cfg.operators
    child_count = cfg.population_size - cfg.elite_count
    for gen in range(len(state.records), cfg.generations):
        started = time.perf_counter()
        prev = state.population
        teacher = _teacher_weights(cfg, prev)
        parents = tournament_select(prev, ops.tournament_size, child_count, state.rng)
        mutated = [mutate(p.genome, ops, cfg.ranges, state.rng) for p in parents]
        children: list[Individual] = []
        for i, parent in enumerate(parents):
            genome = mutated[i]
            if len(parents) > 1:
                j = int(state.rng.integers(len(parents) - 1))
                if j >= i:
                    j += 1
                genome = crossover(mutated[i], mutated[j], ops.swap_prob, state.rng)
            children.append(
                Individual(
                    id=state.next_id,
                    parent_id=parent.id,
                    genome=genome,
                    weights=_copy_weights(parent.weights),
                    epochs_trained=parent.epochs_trained,
                )
            )
            state.next_id += 1

        use_novelty = cfg.pulsation is not None and pulsation_active(gen - 1, cfg.pulsation.period)
        if use_novelty:
            elites = novelty_elite_select(prev, cfg.elite_count, cfg.pulsation.elite_pool)
        else:
            elites = elite_select(prev, cfg.elite_count)

        _evaluate_round(children, teacher, cfg, gen, evaluator, state.counters)
        state.counters.epochs_accounted += cfg.population_size * cfg.epochs_per_generation

        state.population = Population(generation=gen, members=children + elites)
        record = _make_record(
            gen,
            state.population,
            use_novelty,
            {e.id for e in elites},
            time.perf_counter() - started,
        )
        state.records.append(record)
        log.info(
            "generation %d: best fitness %.4f (novelty elites: %s)",
            gen,
            record.best_fitness,
            use_novelty,
        )
        if on_generation is not None:
            on_generation(state)

    return RunResult(state.records, state.counters, state.population)


def _perturb_lr_scale(scale: float, ranges: GeneRanges, reset_prob: float, rng) -> float:
    """PBT explore step: random reset, or multiply/divide by the fixed factor."""
    if rng.random() < reset_prob:
        return float(rng.uniform(*ranges.lr_scale))
    if rng.random() < 0.5:
        return scale * PBT_PERTURB_FACTOR
    return scale / PBT_PERTURB_FACTOR


def run_pbt_baseline(
    cfg: EvolutionConfig,
    evaluator: Evaluator,
    *,
    on_generation: Callable[[RunState], None] | None = None,
    state: RunState | None = None,
) -> RunResult:
    """Truncation-selection baseline: every generation trains all members,
    then the bottom quartile becomes perturbed copies (weights and learning
    rate) of the top quartile. Only the learning rate evolves."""
    cfg.validate()
    quartile = cfg.population_size // 4
    if quartile < 1:
        raise ConfigError("pbt_baseline needs a population of at least 4 for quartiles")

    if state is None:
        rng = np.random.default_rng(cfg.seed)
        members = [
            Individual(
                id=i,
                genome=baseline_genome(lr_scale=float(rng.uniform(*cfg.ranges.lr_scale))),
            )
            for i in range(cfg.population_size)
        ]
        state = RunState(
            Population(0, members), [], rng, RunCounters(), next_id=cfg.population_size
        )

    if not state.records:
        started = time.perf_counter()
        _evaluate_round(state.population.members, None, cfg, 0, evaluator, state.counters)
        state.counters.epochs_accounted += cfg.population_size * cfg.epochs_per_generation
        state.records.append(
            _make_record(0, state.population, False, set(), time.perf_counter() - started)
        )
        log.info("generation 0: best fitness %.4f", state.records[-1].best_fitness)
        if on_generation is not None:
            on_generation(state)

    for gen in range(len(state.records), cfg.generations):
        started = time.perf_counter()
        prev = state.population
        ranked = sorted(prev.members, key=fitness_rank_key)
        replacements: dict[int, tuple[Individual, float]] = {}
        for i in range(quartile):
            source = ranked[i]
            target = ranked[len(ranked) - 1 - i]
            new_scale = _perturb_lr_scale(
                source.genome.lr_scale, cfg.ranges, cfg.operators.reset_prob, state.rng
            )
            replacements[target.id] = (source, new_scale)

        next_members: list[Individual] = []
        for member in prev.members:
            if member.id in replacements:
                source, new_scale = replacements[member.id]
                genome = baseline_genome(lr_scale=new_scale)
            else:
                source, genome = member, member.genome
            next_members.append(
                Individual(
                    id=state.next_id,
                    parent_id=source.id,
                    genome=genome,
                    weights=_copy_weights(source.weights),
                    epochs_trained=source.epochs_trained,
                )
            )
            state.next_id += 1

        _evaluate_round(next_members, None, cfg, gen, evaluator, state.counters)
        state.counters.epochs_accounted += cfg.population_size * cfg.epochs_per_generation
        state.population = Population(generation=gen, members=next_members)
        record = _make_record(
            gen, state.population, False, set(), time.perf_counter() - started
        )
        state.records.append(record)
        log.info("generation %d: best fitness %.4f", gen, record.best_fitness)
        if on_generation is not None:
            on_generation(state)

    return RunResult(state.records, state.counters, state.population)


@dataclass
class EpochRecord:
    epoch: int
    val_accuracy: float
    test_accuracy: float


@dataclass
class SgdBaselineResult:
    curve: list[EpochRecord]
    weights: Weights
    counters: RunCounters
    diverged: bool = False


def run_sgd_baseline(
    cfg: EvolutionConfig,
    split: Split,
    arch: MlpArchitecture,
    sgd: SgdConfig,
) -> SgdBaselineResult:
    """Single model, cross-entropy loss, the fixed step-decay schedule, and
    the same total epoch budget as one evolved lineage. Records validation
    and test accuracy after every epoch."""
    cfg.validate()
    total = cfg.generations * cfg.epochs_per_generation
    rng = np.random.default_rng(cfg.seed)
    weights = he_init(arch, rng)
    curve: list[EpochRecord] = []

    def on_epoch(lifetime: int, w: Weights) -> None:
        curve.append(
            EpochRecord(
                epoch=lifetime,
                val_accuracy=evaluate_accuracy(w, split.validation),
                test_accuracy=evaluate_accuracy(w, split.test),
            )
        )

    final, report = train_epochs(
        weights,
        split.train,
        baseline_genome(),
        total,
        sgd=sgd,
        total_epochs=total,
        rng=rng,
        loss="cross_entropy",
        on_epoch=on_epoch,
    )
    counters = RunCounters(
        genomes_evaluated=1, epochs_trained=report.epochs_consumed, epochs_accounted=total
    )
    return SgdBaselineResult(curve, final, counters, diverged=report.diverged)


def make_training_evaluator(
    split: Split,
    probe_indices: np.ndarray | None,
    arch: MlpArchitecture,
    sgd: SgdConfig,
    total_epochs: int,
    distill_alpha_max: float = 0.0,
    loss: str = "taylor",
) -> Evaluator:
    """Bind the trainer to a data split as an Evaluator.

    Missing weights are He-initialized from the evaluation seed, so
    generation-0 members get independent fresh weights. Behavior vectors are
    computed over `probe_indices` of the validation set when given. Diverged
    training yields fitness 0 and an all-zero behavior vector.
    """
    if probe_indices is not None:
        probe_x = split.validation.features[probe_indices]
        probe_y = split.validation.labels[probe_indices]

    def evaluate(
        individual: Individual, teacher_weights: Any, epochs: int, seed: int
    ) -> EvalResult:
        rng = np.random.default_rng(seed)
        weights = individual.weights if individual.weights is not None else he_init(arch, rng)
        trained, report = train_epochs(
            weights,
            split.train,
            individual.genome,
            epochs,
            sgd=sgd,
            total_epochs=total_epochs,
            rng=rng,
            epochs_already=individual.epochs_trained,
            teacher=teacher_weights,
            distill_alpha_max=distill_alpha_max,
            loss=loss,
        )
        if report.diverged or not trained.all_finite():
            beh = (
                np.zeros(len(probe_indices), dtype=np.uint8)
                if probe_indices is not None
                else None
            )
            return EvalResult(
                weights=trained,
                fitness=0.0,
                behavior=beh,
                test_accuracy=None,
                epochs_consumed=report.epochs_consumed,
                diverged=True,
            )
        fitness = evaluate_accuracy(trained, split.validation)
        beh = (
            behavior(predict_labels(trained, probe_x), probe_y)
            if probe_indices is not None
            else None
        )
        test_acc = evaluate_accuracy(trained, split.test) if len(split.test) else None
        return EvalResult(
            weights=trained,
            fitness=fitness,
            behavior=beh,
            test_accuracy=test_acc,
            epochs_consumed=report.epochs_consumed,
        )

    return evaluate


def make_pbt_evaluator(
    split: Split, arch: MlpArchitecture, sgd: SgdConfig, total_epochs: int
) -> Evaluator:
    """Evaluator for the truncation baseline: cross-entropy loss at a
    constant learning rate (the member's evolvable gene), no distillation."""
    constant_lr = SgdConfig(
        base_lr=sgd.base_lr,
        momentum=sgd.momentum,
        batch_size=sgd.batch_size,
        milestones=(),
        decay_factor=sgd.decay_factor,
        lr_scale=sgd.lr_scale,
    )
    return make_training_evaluator(
        split, None, arch, constant_lr, total_epochs, distill_alpha_max=0.0, loss="cross_entropy"
    )


def predict_counters(strategy: str, cfg: EvolutionConfig) -> RunCounters:
    """The counters a run will produce, computed without any training.

    The first generation evaluates the whole population; each later one
    evaluates only the freshly generated children, while the accounted
    budget covers the full population every generation.
    """
    p, n, k, e = (
        cfg.population_size,
        cfg.generations,
        cfg.elite_count,
        cfg.epochs_per_generation,
    )
    if strategy == "epbt":
        genomes = p + (n - 1) * (p - k)
        return RunCounters(genomes, genomes * e, n * p * e)
    if strategy == "pbt_baseline":
        return RunCounters(n * p, n * p * e, n * p * e)
    if strategy == "sgd_baseline":
        return RunCounters(1, n * e, n * e)
    raise ConfigError(f"strategy must be one of {STRATEGIES}")


def counters_dict(counters: RunCounters) -> dict:
    return asdict(counters)
