"""Training objective: weighted sum of a batch Cox partial-likelihood loss,
multi-class cross-entropy over log-probabilities, and an L1 weight penalty,
with analytic gradients for each part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams


@dataclass(frozen=True)
class SurvivalLabels:
    """Observed time (event or censoring) and the event indicator per sample.

    event == 1 means the event was observed at `time`; event == 0 means the
    sample was censored at `time` (true event time only bounded below).
    """

    time: np.ndarray
    event: np.ndarray

    def __post_init__(self) -> None:
        time = np.asarray(self.time, dtype=np.float64)
        event = np.asarray(self.event, dtype=np.float64)
        if time.ndim != 1 or event.shape != time.shape:
            raise ValueError(f"label shapes {time.shape} / {event.shape} must match 1-D")
        if np.any(time < 0):
            raise ValueError("times must be non-negative")
        if not np.all(np.isin(event, (0.0, 1.0))):
            raise ValueError("event indicators must be 0 or 1")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)

    def __len__(self) -> int:
        return self.time.shape[0]

    def subset(self, idx) -> "SurvivalLabels":
        return SurvivalLabels(self.time[idx], self.event[idx])


@dataclass(frozen=True)
class LossWeights:
    lambda_cox: float = 1.0
    lambda_ce: float = 0.0
    lambda_reg: float = 1e-4

    def __post_init__(self) -> None:
        if min(self.lambda_cox, self.lambda_ce, self.lambda_reg) < 0:
            raise ValueError("loss weights must be non-negative")


SURVIVAL_WEIGHTS = LossWeights(lambda_cox=1.0, lambda_ce=0.0, lambda_reg=1e-4)
CLASSIFICATION_WEIGHTS = LossWeights(lambda_cox=0.0, lambda_ce=1.0, lambda_reg=1e-4)


def _risk_matrix(time: np.ndarray) -> np.ndarray:
    # R[i, j] = 1 iff sample j is still at risk when sample i's event occurs,
    # i.e. time_j >= time_i (ties included on both sides).
    return time[None, :] >= time[:, None]


def cox_loss(theta: np.ndarray, labels: SurvivalLabels) -> float:
    """Negative mean partial log-likelihood of the batch.

    -(1/N) sum_i (theta_i - log sum_j e^{theta_j} R_ij) * event_i, where the
    risk set R_ij contains every sample whose observed time is >= time_i.
    The log-sum-exp is max-subtracted; naive exponentiation overflows past
    |theta| ~ 700. May legitimately be negative (it is a shifted likelihood,
    not a distance).
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if len(labels) == 0:
        raise ValueError("cox_loss requires a non-empty batch")
    if theta.shape[0] != len(labels):
        raise ValueError(f"theta length {theta.shape[0]} != batch size {len(labels)}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("non-finite hazard scores")
    m = theta.max()
    w = np.exp(theta - m)
    denom = _risk_matrix(labels.time) @ w          # per-i risk-set mass
    log_denom = np.log(denom) + m
    return float(-np.mean((theta - log_denom) * labels.event))


def cox_loss_grad(theta: np.ndarray, labels: SurvivalLabels) -> np.ndarray:
    """dL/dtheta_k = -(1/N)[event_k - e^{theta_k} sum_i event_i R_ik / D_i]
    with D_i the risk-set mass of sample i."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if len(labels) == 0:
        raise ValueError("cox_loss_grad requires a non-empty batch")
    if theta.shape[0] != len(labels):
        raise ValueError(f"theta length {theta.shape[0]} != batch size {len(labels)}")
    m = theta.max()
    w = np.exp(theta - m)
    risk = _risk_matrix(labels.time)
    denom = risk @ w
    # sum over events i of R[i, k] / D_i, for each k
    occupancy = (labels.event / denom) @ risk
    return -(labels.event - w * occupancy) / len(labels)


def cross_entropy(log_probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negated log-probability of the true class."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    labels = np.asarray(labels)
    if log_probs.ndim != 2:
        raise ValueError(f"log_probs must be 2-D, got {log_probs.shape}")
    if labels.shape != (log_probs.shape[0],):
        raise ValueError(f"label shape {labels.shape} != batch size {log_probs.shape[0]}")
    if log_probs.shape[0] == 0:
        raise ValueError("cross_entropy requires a non-empty batch")
    if np.any(labels < 0) or np.any(labels >= log_probs.shape[1]):
        raise ValueError("class label out of range")
    picked = log_probs[np.arange(log_probs.shape[0]), labels.astype(int)]
    return float(-picked.mean())


def cross_entropy_grad(log_probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the log-probabilities (the log-softmax jacobian is
    applied by the tape, not here)."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    labels = np.asarray(labels)
    grad = np.zeros_like(log_probs)
    grad[np.arange(log_probs.shape[0]), labels.astype(int)] = -1.0 / log_probs.shape[0]
    return grad


def l1_reg(params: ModelParams) -> float:
    """Sum of |w| over all weight matrices. Biases are exempt: shrinking them
    toward zero is harmless, but penalizing them fights the activation's
    zero-mean fixed point."""
    return float(sum(np.abs(w).sum() for w in params.weights))


def l1_reg_grad(params: ModelParams) -> list[np.ndarray]:
    """Subgradient sign(w) per weight matrix (0 at w == 0)."""
    return [np.sign(w) for w in params.weights]


def combined_loss(
    prediction,
    weights: LossWeights,
    params: ModelParams,
    survival: SurvivalLabels | None = None,
    class_labels: np.ndarray | None = None,
) -> float:
    """lambda_cox * L_cox + lambda_ce * L_ce + lambda_reg * L_reg.

    A component with zero weight is skipped entirely; a positive weight whose
    inputs are missing is a contract error.
    """
    total = 0.0
    if weights.lambda_cox > 0.0:
        if prediction.hazard is None or survival is None:
            raise ValueError("lambda_cox > 0 requires hazard output and survival labels")
        total += weights.lambda_cox * cox_loss(prediction.hazard, survival)
    if weights.lambda_ce > 0.0:
        if prediction.log_probs is None or class_labels is None:
            raise ValueError("lambda_ce > 0 requires log-probs output and class labels")
        total += weights.lambda_ce * cross_entropy(prediction.log_probs, class_labels)
    if weights.lambda_reg > 0.0:
        total += weights.lambda_reg * l1_reg(params)
    return total


def output_grad(
    prediction,
    weights: LossWeights,
    survival: SurvivalLabels | None = None,
    class_labels: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of the data terms w.r.t. the model's output block, shaped for
    the tape (N x 1 hazards or N x C log-probs). The L1 term does not touch
    the output; its subgradient is added to the weight grads separately."""
    if prediction.hazard is not None:
        g = np.zeros((prediction.hazard.shape[0], 1))
        if weights.lambda_cox > 0.0:
            if survival is None:
                raise ValueError("lambda_cox > 0 requires survival labels")
            g[:, 0] = weights.lambda_cox * cox_loss_grad(prediction.hazard, survival)
        return g
    g = np.zeros_like(prediction.log_probs)
    if weights.lambda_ce > 0.0:
        if class_labels is None:
            raise ValueError("lambda_ce > 0 requires class labels")
        g += weights.lambda_ce * cross_entropy_grad(prediction.log_probs, class_labels)
    return g
