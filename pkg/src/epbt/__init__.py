"""Evolutionary population-based training of small classifiers.

Trains a population of feed-forward networks while evolving each member's
loss-function coefficients and SGD schedule genes, with novelty-pulsed
elitism and teacher distillation from the previous generation's best model.
"""

from .data import Dataset, Split, load_csv, load_idx, probe_subset, split, standardize, synth_blobs
from .errors import ConfigError, DataFormatError
from .evolution import (
    EvalResult,
    EvolutionConfig,
    GenerationRecord,
    MemberRecord,
    RunCounters,
    RunResult,
    make_pbt_evaluator,
    make_training_evaluator,
    predict_counters,
    run_epbt,
    run_pbt_baseline,
    run_sgd_baseline,
)
from .genetic_ops import OperatorConfig, crossover, elite_select, mutate, tournament_select
from .novelty import (
    PulsationConfig,
    behavior,
    novelty_elite_select,
    novelty_scores,
    pulsation_active,
)
from .population import (
    GeneRanges,
    Genome,
    Individual,
    Population,
    ancestry,
    ancestry_rows,
    baseline_genome,
    init_population,
    sample_genome,
)
from .runconfig import RunConfig, load_run_config
from .taylor_loss import (
    LossCurve,
    distill_alpha,
    distill_targets,
    project_binary,
    taylor_loss,
    taylor_loss_grad,
)
from .trainer import (
    MlpArchitecture,
    SgdConfig,
    TrainReport,
    Weights,
    evaluate_accuracy,
    forward,
    he_init,
    load_weights,
    lr_at,
    predict_labels,
    save_weights,
    train_epochs,
)

__version__ = "0.1.0"
