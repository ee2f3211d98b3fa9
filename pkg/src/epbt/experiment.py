"""End-to-end experiment orchestration for the CLI.

Builds the data split and evaluator from a RunConfig, drives the configured
strategy, and maintains the on-disk run directory:

    generations.jsonl   one JSON object per generation (population runs)
    training_curve.csv  per-epoch accuracies (single-model baseline)
    summary.json        best individual, counters, wall time
    config_used.json    the resolved configuration
    *.png               fitness / schedule / training-curve figures
    checkpoints/        latest population + RNG state, for --resume

Every file is written atomically and the checkpoint is refreshed after each
generation, so an interrupted run can continue where it stopped.
"""

from __future__ import annotations

import json
import logging
import shutil
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import plots
from .data import Split, load_csv, load_idx, probe_subset, split as split_dataset, standardize, synth_blobs
from .errors import ConfigError, DataFormatError
from .evolution import (
    EvolutionConfig,
    GenerationRecord,
    RunCounters,
    RunResult,
    RunState,
    SgdBaselineResult,
    make_pbt_evaluator,
    make_training_evaluator,
    run_epbt,
    run_pbt_baseline,
    run_sgd_baseline,
)
from .ioutils import atomic_write_text
from .novelty import PulsationConfig
from .population import Genome, Individual, Population
from .runconfig import RunConfig
from .trainer import MlpArchitecture, Weights, load_weights, save_weights

log = logging.getLogger(__name__)

# Distinct seed streams so data assembly, probe sampling, and the evolution
# loop never contend for draws.
_DATA_STREAM = 101
_PROBE_STREAM = 102

GENERATIONS_LOG = "generations.jsonl"
TRAINING_CURVE = "training_curve.csv"
SUMMARY = "summary.json"
CHECKPOINT_DIR = "checkpoints"
LATEST_POINTER = "LATEST"


def build_split(cfg: RunConfig) -> Split:
    """Load or synthesize the dataset and produce the stratified split."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _DATA_STREAM]))
    if cfg.dataset == "blobs":
        dataset = synth_blobs(cfg.blob_classes, cfg.blob_samples_per_class, cfg.blob_noise_sigma, rng)
        parts = split_dataset(dataset, cfg.val_fraction, cfg.test_fraction, rng)
    elif cfg.dataset == "csv":
        dataset = load_csv(cfg.csv_path, cfg.csv_label_column)
        parts = standardize(split_dataset(dataset, cfg.val_fraction, cfg.test_fraction, rng))
    elif cfg.dataset == "idx":
        # IDX pixels are already globally normalized by the loader
        dataset = load_idx(cfg.idx_images_path, cfg.idx_labels_path)
        parts = split_dataset(dataset, cfg.val_fraction, cfg.test_fraction, rng)
    else:
        raise ConfigError(f"unknown dataset kind {cfg.dataset!r}")
    return parts


def _resolve_probe(cfg: RunConfig, evo: EvolutionConfig, validation_size: int) -> EvolutionConfig:
    """Clamp the defaulted probe size to the validation size; an explicit
    probe_size larger than the validation set stays an error."""
    if evo.pulsation is None or cfg.probe_size is not None:
        return evo
    clamped = min(evo.pulsation.probe_size, validation_size)
    evo.pulsation = PulsationConfig(
        period=evo.pulsation.period, elite_pool=evo.pulsation.elite_pool, probe_size=clamped
    )
    return evo


def write_generations_jsonl(records, path: str | Path) -> None:
    lines = [json.dumps(r.to_json_dict(), sort_keys=True) for r in records]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_generations_jsonl(path: str | Path) -> list[GenerationRecord]:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"missing generation log: {path}")
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(GenerationRecord.from_json_dict(json.loads(line)))
    return records


def _genome_dict(genome: Genome) -> dict:
    return {
        "theta": [float(v) for v in genome.theta],
        "lr_scale": genome.lr_scale,
        "lr_decay_factor": genome.lr_decay_factor,
        "momentum": genome.momentum,
    }


def save_checkpoint(run_dir: Path, state: RunState, strategy: str) -> None:
    """Persist the live population, counters, and RNG state; prune older
    checkpoints once the LATEST pointer moves."""
    generation = len(state.records) - 1
    root = run_dir / CHECKPOINT_DIR
    target = root / f"state_gen_{generation:05d}"
    target.mkdir(parents=True, exist_ok=True)
    members = []
    for member in state.population.members:
        weights_file = None
        if isinstance(member.weights, Weights):
            weights_file = f"member_{member.id}.wts"
            save_weights(member.weights, target / weights_file)
        members.append(
            {
                "id": member.id,
                "parent_id": member.parent_id,
                "genome": _genome_dict(member.genome),
                "fitness": member.fitness,
                "test_accuracy": member.test_accuracy,
                "epochs_trained": member.epochs_trained,
                "behavior": None if member.behavior is None else [int(b) for b in member.behavior],
                "weights_file": weights_file,
            }
        )
    doc = {
        "schema_version": 1,
        "strategy": strategy,
        "generation": generation,
        "population_generation": state.population.generation,
        "next_id": state.next_id,
        "counters": asdict(state.counters),
        "rng_state": state.rng.bit_generator.state,
        "members": members,
    }
    atomic_write_text(target / "state.json", json.dumps(doc, sort_keys=True))
    atomic_write_text(root / LATEST_POINTER, target.name + "\n")
    for entry in root.iterdir():
        if entry.is_dir() and entry.name != target.name:
            shutil.rmtree(entry)


def load_checkpoint(run_dir: Path, strategy: str) -> RunState:
    root = run_dir / CHECKPOINT_DIR
    pointer = root / LATEST_POINTER
    if not pointer.exists():
        raise ConfigError(f"no checkpoint to resume from in {root}")
    target = root / pointer.read_text(encoding="utf-8").strip()
    doc = json.loads((target / "state.json").read_text(encoding="utf-8"))
    if doc["strategy"] != strategy:
        raise ConfigError(
            f"checkpoint strategy {doc['strategy']!r} does not match config {strategy!r}"
        )
    members = []
    for m in doc["members"]:
        weights = None
        if m["weights_file"] is not None:
            weights = load_weights(target / m["weights_file"])
        members.append(
            Individual(
                id=m["id"],
                parent_id=m["parent_id"],
                genome=Genome(
                    theta=np.asarray(m["genome"]["theta"], dtype=np.float64),
                    lr_scale=m["genome"]["lr_scale"],
                    lr_decay_factor=m["genome"]["lr_decay_factor"],
                    momentum=m["genome"]["momentum"],
                ),
                weights=weights,
                fitness=m["fitness"],
                behavior=None if m["behavior"] is None else np.asarray(m["behavior"], dtype=np.uint8),
                epochs_trained=m["epochs_trained"],
                test_accuracy=m["test_accuracy"],
            )
        )
    rng = np.random.default_rng(0)
    rng.bit_generator.state = doc["rng_state"]
    records = read_generations_jsonl(run_dir / GENERATIONS_LOG)
    expected = doc["generation"] + 1
    if len(records) < expected:
        raise ConfigError(
            f"generation log has {len(records)} records but checkpoint is at generation "
            f"{doc['generation']}; cannot resume"
        )
    records = records[:expected]
    counters = RunCounters(**doc["counters"])
    population = Population(generation=doc["population_generation"], members=members)
    return RunState(population, records, rng, counters, next_id=doc["next_id"])


def _make_writer(run_dir: Path, strategy: str):
    def on_generation(state: RunState) -> None:
        write_generations_jsonl(state.records, run_dir / GENERATIONS_LOG)
        save_checkpoint(run_dir, state, strategy)

    return on_generation


def _population_summary(result: RunResult, cfg: RunConfig, wall_time_s: float) -> dict:
    best = result.best
    return {
        "strategy": cfg.strategy,
        "generations": len(result.records),
        "best_id": best.id,
        "best_fitness": best.fitness_or_zero,
        "best_test_accuracy": best.test_accuracy,
        "best_genome": _genome_dict(best.genome),
        "counters": asdict(result.counters),
        "wall_time_s": wall_time_s,
    }


def _write_training_curve(result: SgdBaselineResult, path: Path) -> None:
    lines = ["epoch,val_accuracy,test_accuracy"]
    for row in result.curve:
        lines.append(f"{row.epoch},{row.val_accuracy!r},{row.test_accuracy!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def run_from_config(cfg: RunConfig, *, resume: bool = False) -> dict:
    """Execute the configured strategy and populate the run directory.

    Returns the summary document (also written to summary.json).
    """
    cfg.validate()
    run_dir = cfg.resolved_output_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(
        run_dir / "config_used.json",
        json.dumps(cfg.to_file_dict(), indent=2, sort_keys=True) + "\n",
    )
    parts = build_split(cfg)
    arch = MlpArchitecture(
        (parts.train.dims, *cfg.hidden_layers, parts.train.class_count)
    )
    sgd = cfg.to_sgd()
    evo = cfg.to_evolution_config()
    total_epochs = evo.generations * evo.epochs_per_generation
    started = time.perf_counter()

    if cfg.strategy == "sgd_baseline":
        if resume:
            raise ConfigError("resume is not supported for strategy=sgd_baseline")
        result = run_sgd_baseline(evo, parts, arch, sgd)
        _write_training_curve(result, run_dir / TRAINING_CURVE)
        plots.save_training_curve_plot(result.curve, run_dir / "training_curve.png")
        save_weights(result.weights, run_dir / "final_model.wts")
        final = result.curve[-1] if result.curve else None
        summary = {
            "strategy": cfg.strategy,
            "epochs": len(result.curve),
            "final_val_accuracy": final.val_accuracy if final else None,
            "final_test_accuracy": final.test_accuracy if final else None,
            "diverged": result.diverged,
            "counters": asdict(result.counters),
            "wall_time_s": time.perf_counter() - started,
        }
        atomic_write_text(run_dir / SUMMARY, json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return summary

    writer = _make_writer(run_dir, cfg.strategy)
    state = load_checkpoint(run_dir, cfg.strategy) if resume else None
    if cfg.strategy == "epbt":
        evo = _resolve_probe(cfg, evo, len(parts.validation))
        probe = None
        if evo.pulsation is not None:
            probe_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _PROBE_STREAM]))
            probe = probe_subset(parts.validation, evo.pulsation.probe_size, probe_rng)
        evaluator = make_training_evaluator(
            parts,
            probe,
            arch,
            sgd,
            total_epochs,
            distill_alpha_max=cfg.distill_alpha if cfg.distill_alpha is not None else 0.0,
        )
        result = run_epbt(evo, evaluator, on_generation=writer, state=state)
    else:
        evaluator = make_pbt_evaluator(parts, arch, sgd, total_epochs)
        result = run_pbt_baseline(evo, evaluator, on_generation=writer, state=state)

    plots.save_fitness_plot(result.records, run_dir / "fitness.png")
    plots.save_schedule_plot(result.records, run_dir / "schedule.png", base_lr=cfg.base_lr)
    best = result.best
    if isinstance(best.weights, Weights):
        save_weights(best.weights, run_dir / "best_model.wts")
    summary = _population_summary(result, cfg, time.perf_counter() - started)
    atomic_write_text(run_dir / SUMMARY, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
