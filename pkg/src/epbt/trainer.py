"""Small feed-forward classifier trainer: the evaluation engine.

A model is a fully connected net with rectifier hidden layers and a softmax
output, in double precision throughout so gradient checks can be tight.
Training is shuffled mini-batch SGD with momentum under a step-decay
learning-rate schedule whose scale and decay factor come from the genome
being evaluated. The loss is either the Taylor parameterization (gradient
chained through the softmax Jacobian) or plain cross-entropy for the
baselines. When a teacher model is supplied, batch targets are blended
toward the teacher's predictions with a linearly ramped coefficient.

Non-finite losses or weights abort the evaluation and are reported as a
divergence rather than raised; the caller records fitness 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import DataFormatError
from .ioutils import atomic_write_bytes
from .population import Genome
from .taylor_loss import distill_alpha, distill_targets, taylor_grad_batch, taylor_loss_batch

WEIGHTS_MAGIC = b"EPBTWTS\x00"
WEIGHTS_VERSION = 1

LOSS_KINDS = ("taylor", "cross_entropy")


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer widths from input to output; no entry for the softmax."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("architecture needs at least input and output sizes")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("layer sizes must be positive")

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]


@dataclass
class Weights:
    """Per-layer weight matrices (fan_in x fan_out) and bias vectors."""

    matrices: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "Weights":
        return Weights([m.copy() for m in self.matrices], [b.copy() for b in self.biases])

    def layer_sizes(self) -> tuple[int, ...]:
        return tuple(m.shape[0] for m in self.matrices) + (self.matrices[-1].shape[1],)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(m)) for m in self.matrices) and all(
            np.all(np.isfinite(b)) for b in self.biases
        )


@dataclass
class SgdConfig:
    """Optimizer settings. Milestones are fractions of the total epoch count;
    at each one the learning rate divides by `decay_factor`."""

    base_lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 128
    milestones: tuple[float, ...] = (0.3, 0.6, 0.8)
    decay_factor: float = 5.0
    lr_scale: float = 1.0

    def __post_init__(self):
        if self.base_lr <= 0 or self.lr_scale <= 0:
            raise ValueError("learning rate and scale must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if any(not 0 < m < 1 for m in self.milestones):
            raise ValueError("milestones must be fractions in (0, 1)")
        if list(self.milestones) != sorted(set(self.milestones)):
            raise ValueError("milestones must be strictly increasing")
        if self.decay_factor <= 1:
            raise ValueError("decay_factor must exceed 1")


@dataclass
class TrainReport:
    """Outcome of one training call."""

    epochs_consumed: int
    diverged: bool = False
    final_loss: float | None = None


def sgd_for_genome(base: SgdConfig, genome: Genome) -> SgdConfig:
    """Overlay the genome's schedule genes on a base optimizer config."""
    return replace(
        base,
        momentum=genome.momentum,
        lr_scale=genome.lr_scale,
        decay_factor=genome.lr_decay_factor,
    )


def he_init(arch: MlpArchitecture, rng) -> Weights:
    """He-normal weights (variance 2/fan_in), zero biases."""
    matrices, biases = [], []
    for fan_in, fan_out in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]):
        matrices.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Weights(matrices, biases)


def lr_at(cfg: SgdConfig, epoch: int, total_epochs: int) -> float:
    """Step-decay schedule: base*scale divided by decay_factor once per
    milestone already reached. Milestones resolve to whole epochs by
    rounding fraction*total_epochs."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    drops = sum(1 for m in cfg.milestones if int(round(m * total_epochs)) <= epoch)
    return cfg.base_lr * cfg.lr_scale / cfg.decay_factor**drops


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cached(w: Weights, x: np.ndarray):
    """Forward pass keeping per-layer inputs and pre-activations for backprop."""
    activations = [x]
    pre_acts = []
    a = x
    last = len(w.matrices) - 1
    for i, (mat, bias) in enumerate(zip(w.matrices, w.biases)):
        z = a @ mat + bias
        if i < last:
            pre_acts.append(z)
            a = np.maximum(z, 0.0)
            activations.append(a)
        else:
            return _softmax(z), activations, pre_acts
    raise AssertionError("unreachable")


def forward(w: Weights, inputs) -> np.ndarray:
    """Class probabilities for a batch of feature rows; each row sums to 1."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("inputs must be a (batch, features) matrix")
    if x.shape[1] != w.matrices[0].shape[0]:
        raise ValueError(
            f"input width {x.shape[1]} does not match model input size {w.matrices[0].shape[0]}"
        )
    probs, _, _ = _forward_cached(w, x)
    return probs


def predict_labels(w: Weights, inputs) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    return np.argmax(forward(w, inputs), axis=1)


def _backprop(w: Weights, activations, pre_acts, dz: np.ndarray):
    """Gradients for every matrix/bias given dLoss/dlogits of the output layer."""
    grad_mats = [None] * len(w.matrices)
    grad_biases = [None] * len(w.biases)
    delta = dz
    for layer in range(len(w.matrices) - 1, -1, -1):
        grad_mats[layer] = activations[layer].T @ delta
        grad_biases[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ w.matrices[layer].T) * (pre_acts[layer - 1] > 0)
    return grad_mats, grad_biases


def _one_hot(labels: np.ndarray, class_count: int) -> np.ndarray:
    out = np.zeros((len(labels), class_count))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def batch_loss_and_logit_grad(targets, probs, genome: Genome, loss: str):
    """Mean batch loss and dLoss/dlogits (already averaged over the batch)."""
    if loss == "taylor":
        values = taylor_loss_batch(targets, probs, genome.theta)
        g = taylor_grad_batch(targets, probs, genome.theta)
        # chain rule through the softmax Jacobian, row by row
        dz = probs * (g - (g * probs).sum(axis=1, keepdims=True))
    elif loss == "cross_entropy":
        values = -(targets * np.log(np.clip(probs, 1e-12, None))).sum(axis=1)
        # softmax + cross-entropy collapse; valid because target rows sum to 1
        dz = probs - targets
    else:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSS_KINDS}")
    return float(values.mean()), dz / len(targets)


def train_epochs(
    weights: Weights,
    train: Dataset,
    genome: Genome,
    epochs: int,
    *,
    sgd: SgdConfig,
    total_epochs: int,
    rng,
    epochs_already: int = 0,
    teacher: Weights | None = None,
    distill_alpha_max: float = 0.0,
    loss: str = "taylor",
    on_epoch=None,
) -> tuple[Weights, TrainReport]:
    """Run `epochs` epochs of shuffled mini-batch SGD with momentum.

    The schedule position and the distillation ramp both use the model's
    lifetime epoch count (`epochs_already` + progress here) against
    `total_epochs`. With a teacher, each batch's targets are the ramped
    blend of the one-hot labels and the teacher's predictions on the batch.
    `on_epoch(lifetime_epochs, weights)` fires after every completed epoch.

    Returns fresh weights (the input is not modified) and a report; if a
    loss or any weight goes non-finite the report is flagged diverged and
    training stops early.
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    if epochs_already < 0 or epochs_already + epochs > total_epochs:
        raise ValueError("lifetime epochs would exceed total_epochs")
    cfg = sgd_for_genome(sgd, genome)
    w = weights.copy()
    velocity_m = [np.zeros_like(m) for m in w.matrices]
    velocity_b = [np.zeros_like(b) for b in w.biases]
    features = train.features
    targets_onehot = _one_hot(train.labels, train.class_count)

    completed = 0
    last_loss: float | None = None
    # float overflow is an expected, handled outcome here (reported as
    # divergence), so numpy warnings are silenced for the loop
    with np.errstate(over="ignore", invalid="ignore"):
        for e in range(epochs):
            lifetime = epochs_already + e
            lr = lr_at(cfg, lifetime, total_epochs)
            alpha_hat = (
                distill_alpha(distill_alpha_max, lifetime, total_epochs)
                if teacher is not None
                else 0.0
            )
            order = rng.permutation(len(features))
            for start in range(0, len(features), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                xb = features[idx]
                yb = targets_onehot[idx]
                if teacher is not None:
                    yb = distill_targets(yb, forward(teacher, xb), alpha_hat)
                probs, acts, pre = _forward_cached(w, xb)
                loss_value, dz = batch_loss_and_logit_grad(yb, probs, genome, loss)
                last_loss = loss_value
                if not np.isfinite(loss_value):
                    return w, TrainReport(completed, diverged=True, final_loss=loss_value)
                grad_mats, grad_biases = _backprop(w, acts, pre, dz)
                for i in range(len(w.matrices)):
                    velocity_m[i] = cfg.momentum * velocity_m[i] - lr * grad_mats[i]
                    velocity_b[i] = cfg.momentum * velocity_b[i] - lr * grad_biases[i]
                    w.matrices[i] += velocity_m[i]
                    w.biases[i] += velocity_b[i]
                if not w.all_finite():
                    return w, TrainReport(completed, diverged=True, final_loss=loss_value)
            completed += 1
            if on_epoch is not None:
                on_epoch(lifetime + 1, w)
    return w, TrainReport(completed, final_loss=last_loss)


def evaluate_accuracy(w: Weights, dataset: Dataset) -> float:
    """Fraction of argmax predictions matching the labels."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate accuracy on an empty dataset")
    return float(np.mean(predict_labels(w, dataset.features) == dataset.labels))


def save_weights(w: Weights, path: str | Path) -> None:
    """Serialize weights in the versioned binary checkpoint layout.

    Header: 8-byte magic, little-endian uint32 format version, uint32 size
    count, then the layer sizes as uint32. Body: for each layer, the weight
    matrix as row-major float64 followed by the bias vector as float64.
    """
    sizes = w.layer_sizes()
    parts = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(sizes))]
    parts.append(struct.pack(f"<{len(sizes)}I", *sizes))
    for mat, bias in zip(w.matrices, w.biases):
        parts.append(np.ascontiguousarray(mat, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(bias, dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_weights(path: str | Path) -> Weights:
    raw = Path(path).read_bytes()
    if raw[: len(WEIGHTS_MAGIC)] != WEIGHTS_MAGIC:
        raise DataFormatError(f"{path}: bad weights magic")
    offset = len(WEIGHTS_MAGIC)
    version, n_sizes = struct.unpack_from("<II", raw, offset)
    if version != WEIGHTS_VERSION:
        raise DataFormatError(f"{path}: unsupported weights version {version}")
    offset += 8
    sizes = struct.unpack_from(f"<{n_sizes}I", raw, offset)
    offset += 4 * n_sizes
    matrices, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        n = fan_in * fan_out
        mat = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(fan_in, fan_out)
        offset += 8 * n
        bias = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        matrices.append(mat.astype(np.float64))
        biases.append(bias.astype(np.float64))
    if offset != len(raw):
        raise DataFormatError(f"{path}: trailing bytes in weights file")
    return Weights(matrices, biases)
