"""Third-order Taylor parameterization of classification losses.

A loss is described by eight coefficients ``theta[0..7]``: two expansion
centers (one for the label vector, one for the prediction vector) and six
polynomial coefficients. Evaluated on a one-hot label ``y`` and a softmax
prediction ``y_hat`` of length ``n``, the loss is

    -(1/n) * sum_i [ t2*u + t3/2*u^2 + t4/6*u^3
                     + t5*v*u + t6/2*v*u^2 + t7/2*v^2*u ]

with ``u = y_hat[i] - t1`` and ``v = y[i] - t0``. The family is smooth,
covers non-monotone shapes, and can be searched as a flat real vector.
Values may be negative and are not clamped.

Also provided: the analytic gradient with respect to ``y_hat`` (what the
trainer chains through the softmax Jacobian), a 2D binary-classification
projection used to render a parameter vector as a curve, and the blended
soft targets used for teacher distillation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ioutils import atomic_write_text

PARAM_COUNT = 8


def as_params(theta) -> np.ndarray:
    """Validate and return the 8-entry coefficient vector as float64."""
    arr = np.asarray(theta, dtype=np.float64)
    if arr.shape != (PARAM_COUNT,):
        raise ValueError(f"expected {PARAM_COUNT} loss parameters, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("loss parameters must all be finite")
    return arr


def _check_pair(y, y_hat) -> tuple[np.ndarray, np.ndarray]:
    ya = np.asarray(y, dtype=np.float64)
    pa = np.asarray(y_hat, dtype=np.float64)
    if ya.shape != pa.shape:
        raise ValueError(f"label/prediction shape mismatch: {ya.shape} vs {pa.shape}")
    return ya, pa


def taylor_loss_batch(targets, probs, theta) -> np.ndarray:
    """Loss for each row of a (batch, classes) target/prediction pair."""
    th = as_params(theta)
    t, p = _check_pair(targets, probs)
    n = t.shape[-1]
    u = p - th[1]
    v = t - th[0]
    u2 = u * u
    terms = (
        th[2] * u
        + 0.5 * th[3] * u2
        + th[4] / 6.0 * u2 * u
        + th[5] * v * u
        + 0.5 * th[6] * v * u2
        + 0.5 * th[7] * v * v * u
    )
    return -terms.sum(axis=-1) / n


def taylor_grad_batch(targets, probs, theta) -> np.ndarray:
    """Row-wise gradient of `taylor_loss_batch` with respect to the predictions."""
    th = as_params(theta)
    t, p = _check_pair(targets, probs)
    n = t.shape[-1]
    u = p - th[1]
    v = t - th[0]
    inner = (
        th[2]
        + th[3] * u
        + 0.5 * th[4] * u * u
        + th[5] * v
        + th[6] * v * u
        + 0.5 * th[7] * v * v
    )
    return -inner / n


def taylor_loss(y, y_hat, theta) -> float:
    """Loss for a single (label, prediction) pair of equal length n >= 2."""
    ya, pa = _check_pair(y, y_hat)
    return float(taylor_loss_batch(ya[None, :], pa[None, :], theta)[0])


def taylor_loss_grad(y, y_hat, theta) -> np.ndarray:
    """Gradient of `taylor_loss` with respect to each prediction entry."""
    ya, pa = _check_pair(y, y_hat)
    return taylor_grad_batch(ya[None, :], pa[None, :], theta)[0]


@dataclass
class LossCurve:
    """A sampled 2D binary-classification projection of a loss. x runs 0..1."""

    xs: np.ndarray
    losses: np.ndarray

    def samples(self) -> list[tuple[float, float]]:
        return [(float(x), float(v)) for x, v in zip(self.xs, self.losses)]


def project_binary(theta, resolution: int) -> LossCurve:
    """Project a coefficient vector onto a two-class curve.

    The correct class gets predicted probability x and the other class 1-x,
    for `resolution` evenly spaced x in [0, 1]; x=1 is a perfect prediction.
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    xs = np.linspace(0.0, 1.0, resolution)
    y = np.array([[1.0, 0.0]])
    probs = np.column_stack([xs, 1.0 - xs])
    losses = taylor_loss_batch(np.broadcast_to(y, probs.shape), probs, theta)
    return LossCurve(xs=xs, losses=losses)


def write_loss_curve_csv(curve: LossCurve, path: str | Path) -> None:
    """Write a curve as CSV with header ``x,loss``."""
    lines = ["x,loss"]
    lines += [f"{float(x)!r},{float(v)!r}" for x, v in zip(curve.xs, curve.losses)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_loss_curve_csv(path: str | Path) -> LossCurve:
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not text or text[0] != "x,loss":
        raise ValueError(f"{path}: not a loss-curve CSV (missing 'x,loss' header)")
    xs, losses = [], []
    for line in text[1:]:
        sx, sv = line.split(",")
        xs.append(float(sx))
        losses.append(float(sv))
    return LossCurve(xs=np.asarray(xs), losses=np.asarray(losses))


def distill_alpha(alpha: float, epochs_elapsed: float, total_epochs: float) -> float:
    """Linear distillation ramp: starts at zero, reaches `alpha` at the last epoch."""
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    if not 0 <= epochs_elapsed <= total_epochs:
        raise ValueError("epochs_elapsed must lie in [0, total_epochs]")
    return alpha * (epochs_elapsed / total_epochs)


def distill_targets(y, teacher_pred, alpha_hat: float) -> np.ndarray:
    """Blend ground truth with teacher predictions: alpha_hat*teacher + (1-alpha_hat)*y.

    Both inputs must have the same shape; rows on the probability simplex map
    to rows on the simplex.
    """
    ya, ta = _check_pair(y, teacher_pred)
    return alpha_hat * ta + (1.0 - alpha_hat) * ya
