"""Run configuration: a flat JSON document with strict key checking.

Unknown keys are rejected outright; a silently ignored typo in a
hyperparameter name is the kind of bug this tool exists to prevent.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .evolution import STRATEGIES, EvolutionConfig
from .genetic_ops import OperatorConfig
from .novelty import PulsationConfig
from .population import GeneRanges
from .trainer import SgdConfig

OUTPUT_DIR_ENV = "EPBT_OUTPUT_DIR"

DATASETS = ("blobs", "csv", "idx")


@dataclass
class RunConfig:
    """Flat run description; every field is a config-file key."""

    strategy: str = "epbt"
    dataset: str = "blobs"

    blob_classes: int = 3
    blob_samples_per_class: int = 200
    blob_noise_sigma: float = 1.0
    csv_path: str | None = None
    csv_label_column: str = "label"
    idx_images_path: str | None = None
    idx_labels_path: str | None = None
    val_fraction: float = 0.2
    test_fraction: float = 0.2

    hidden_layers: list[int] = field(default_factory=lambda: [64, 32])
    batch_size: int = 128
    base_lr: float = 0.1
    lr_milestones: list[float] = field(default_factory=lambda: [0.3, 0.6, 0.8])

    population_size: int = 40
    generations: int = 25
    elite_count: int = 20
    epochs_per_generation: int = 8

    tournament_size: int = 2
    mutation_sigma: float = 0.1
    per_gene_mutation_prob: float = 0.25
    reset_prob: float = 0.05
    swap_prob: float = 0.5

    pulsation_period: int | None = 5
    elite_pool_size: int | None = None
    probe_size: int | None = None

    distill_alpha: float | None = 0.5

    theta_range: list[float] = field(default_factory=lambda: [-10.0, 10.0])
    lr_scale_range: list[float] = field(default_factory=lambda: [0.001, 1.0])
    lr_decay_range: list[float] = field(default_factory=lambda: [1.5, 10.0])
    momentum_range: list[float] = field(default_factory=lambda: [0.8, 0.99])

    seed: int = 0
    workers: int | None = None
    output_dir: str | None = None

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.dataset == "csv" and not self.csv_path:
            raise ConfigError("dataset=csv requires csv_path")
        if self.dataset == "idx" and not (self.idx_images_path and self.idx_labels_path):
            raise ConfigError("dataset=idx requires idx_images_path and idx_labels_path")
        for name in ("val_fraction", "test_fraction", "blob_noise_sigma", "base_lr"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value)):
                raise ConfigError(f"{name} must be a finite number")
        # an empty hidden_layers list means "no hidden layers", which is legal
        if self.hidden_layers and not all(
            isinstance(v, int) and v > 0 for v in self.hidden_layers
        ):
            raise ConfigError("hidden_layers entries must be positive integers")
        for name in ("theta_range", "lr_scale_range", "lr_decay_range", "momentum_range"):
            pair = getattr(self, name)
            if not (isinstance(pair, list) and len(pair) == 2):
                raise ConfigError(f"{name} must be a [low, high] pair")
        # EvolutionConfig / operator / pulsation cross-field invariants
        self.to_evolution_config().validate()

    def to_ranges(self) -> GeneRanges:
        return GeneRanges(
            theta=tuple(self.theta_range),
            lr_scale=tuple(self.lr_scale_range),
            lr_decay_factor=tuple(self.lr_decay_range),
            momentum=tuple(self.momentum_range),
        )

    def to_operators(self) -> OperatorConfig:
        return OperatorConfig(
            tournament_size=self.tournament_size,
            mutation_sigma=self.mutation_sigma,
            reset_prob=self.reset_prob,
            per_gene_mutation_prob=self.per_gene_mutation_prob,
            swap_prob=self.swap_prob,
            elite_count=self.elite_count,
        )

    def to_pulsation(self) -> PulsationConfig | None:
        if self.pulsation_period is None:
            return None
        pool = self.elite_pool_size
        if pool is None:
            pool = min(math.ceil(1.5 * self.elite_count), self.population_size)
        probe = self.probe_size if self.probe_size is not None else 400
        return PulsationConfig(period=self.pulsation_period, elite_pool=pool, probe_size=probe)

    def to_evolution_config(self) -> EvolutionConfig:
        return EvolutionConfig(
            population_size=self.population_size,
            generations=self.generations,
            elite_count=self.elite_count,
            epochs_per_generation=self.epochs_per_generation,
            operators=self.to_operators(),
            ranges=self.to_ranges(),
            pulsation=self.to_pulsation(),
            distill_alpha=self.distill_alpha,
            seed=self.seed,
            workers=self.resolved_workers(),
            strategy=self.strategy,
        )

    def to_sgd(self) -> SgdConfig:
        return SgdConfig(
            base_lr=self.base_lr,
            batch_size=self.batch_size,
            milestones=tuple(self.lr_milestones),
        )

    def resolved_workers(self) -> int:
        if self.workers is not None:
            return self.workers
        return os.cpu_count() or 1

    def resolved_output_dir(self) -> Path:
        env = os.environ.get(OUTPUT_DIR_ENV)
        target = env or self.output_dir
        if not target:
            raise ConfigError(
                f"no output directory: set output_dir in the config or {OUTPUT_DIR_ENV}"
            )
        return Path(target)

    def to_file_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def config_from_dict(raw: dict[str, Any]) -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = RunConfig(**raw)
    cfg.validate()
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object of key/value pairs")
    return config_from_dict(raw)
