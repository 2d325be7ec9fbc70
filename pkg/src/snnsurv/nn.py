"""Dense numeric kernel: matrices, SELU / alpha-dropout primitives, and
reverse-mode gradients for stacks of affine layers.

Everything operates on 2-D float64 numpy arrays (rows = samples). All
functions are pure given an explicit RNG, so they are safe to call from
multiple threads on disjoint data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ActivationConstants",
    "SELU_CONSTANTS",
    "GradTape",
    "ParamGrads",
    "matmul",
    "selu",
    "selu_backward",
    "elu",
    "elu_backward",
    "alpha_dropout",
    "alpha_dropout_backward",
    "linear_forward",
    "log_softmax",
    "backward",
]


@dataclass(frozen=True)
class ActivationConstants:
    """Scale / negative-scale constants of the self-normalizing activation.

    ``neg_saturation`` (= -scale*alpha) is the limit of the activation for
    large negative inputs and the value dropped units are pinned to.
    """

    scale: float = 1.05071
    alpha: float = 1.6733

    def __post_init__(self) -> None:
        if not self.scale > 1.0:
            raise ValueError(f"scale must exceed 1, got {self.scale}")
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    @property
    def neg_saturation(self) -> float:
        return -self.scale * self.alpha


SELU_CONSTANTS = ActivationConstants()


def _as_matrix(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {x.shape}")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def selu(x: np.ndarray, c: ActivationConstants = SELU_CONSTANTS) -> np.ndarray:
    """scale*x for x > 0, scale*alpha*(e^x - 1) for x <= 0; continuous at 0."""
    x = np.asarray(x, dtype=np.float64)
    # expm1 on min(x, 0) keeps the unused branch from overflowing.
    neg = c.scale * c.alpha * np.expm1(np.minimum(x, 0.0))
    return np.where(x > 0.0, c.scale * x, neg)


def selu_backward(
    x: np.ndarray, upstream: np.ndarray, c: ActivationConstants = SELU_CONSTANTS
) -> np.ndarray:
    """Chain upstream through the activation derivative evaluated at x.

    At exactly x == 0 the x <= 0 branch applies, so the slope is scale*alpha.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != upstream.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs upstream {upstream.shape}")
    slope = np.where(x > 0.0, c.scale, c.scale * c.alpha * np.exp(np.minimum(x, 0.0)))
    return upstream * slope


def elu(x: np.ndarray, c: ActivationConstants = SELU_CONSTANTS) -> np.ndarray:
    """Unscaled exponential linear unit (config alternative to selu)."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def elu_backward(
    x: np.ndarray, upstream: np.ndarray, c: ActivationConstants = SELU_CONSTANTS
) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != upstream.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs upstream {upstream.shape}")
    return upstream * np.where(x > 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


def alpha_dropout_coeffs(p: float, c: ActivationConstants = SELU_CONSTANTS) -> tuple[float, float]:
    """Affine correction (a, b) that restores zero mean / unit variance after
    dropping a fraction p of units to the saturation value."""
    q = 1.0 - p
    ap = c.neg_saturation
    a = (q + ap * ap * q * (1.0 - q)) ** -0.5
    b = -a * (1.0 - q) * ap
    return a, b


def alpha_dropout(
    x: np.ndarray,
    p: float,
    training: bool,
    rng: np.random.Generator | None,
    c: ActivationConstants = SELU_CONSTANTS,
) -> tuple[np.ndarray, np.ndarray]:
    """Self-normalizing dropout.

    Kept units pass through; dropped units are set to the activation's
    negative saturation, then the whole output gets the affine correction
    from :func:`alpha_dropout_coeffs` so standard-normal inputs keep
    mean ~0, variance ~1 in expectation. Inference (training=False) or
    p == 0 is the identity. Returns (output, keep mask).
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    x = np.asarray(x, dtype=np.float64)
    if not training or p == 0.0:
        return x, np.ones_like(x, dtype=bool)
    if rng is None:
        raise ValueError("training-mode dropout requires an rng")
    keep = rng.random(x.shape) >= p
    a, b = alpha_dropout_coeffs(p, c)
    return a * np.where(keep, x, c.neg_saturation) + b, keep


def alpha_dropout_backward(keep: np.ndarray, a: float, upstream: np.ndarray) -> np.ndarray:
    return np.where(keep, a * upstream, 0.0)


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax, stabilized by max subtraction."""
    z = _as_matrix(z, "z")
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# Gradient tape
# ---------------------------------------------------------------------------

# Record kinds and their caches:
#   ("linear", x, W)          y = x @ W + b
#   ("selu", z) / ("elu", z)  pre-activation
#   ("dropout", keep, a)      keep mask and affine scale
#   ("log_softmax", logp)     row log-probabilities


@dataclass
class GradTape:
    """Ordered forward caches sufficient to replay the backward pass."""

    records: list[tuple] = field(default_factory=list)
    constants: ActivationConstants = SELU_CONSTANTS

    def add(self, kind: str, *cache) -> None:
        self.records.append((kind, *cache))


@dataclass
class ParamGrads:
    """Gradients in the same layer order as the parameters they match."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    wrt_input: np.ndarray


def linear_forward(
    x: np.ndarray, W: np.ndarray, b: np.ndarray, tape: GradTape | None = None
) -> np.ndarray:
    """x @ W + b, broadcasting b across rows; caches x on the tape."""
    x = _as_matrix(x, "x")
    W = _as_matrix(W, "W")
    b = np.asarray(b, dtype=np.float64)
    if x.shape[1] != W.shape[0]:
        raise ValueError(f"linear shape mismatch: x {x.shape} vs W {W.shape}")
    if b.shape != (W.shape[1],):
        raise ValueError(f"bias shape {b.shape} does not match W columns {W.shape[1]}")
    if tape is not None:
        tape.add("linear", x, W)
    return x @ W + b


def backward(tape: GradTape, loss_grad: np.ndarray) -> ParamGrads:
    """Replay the tape in reverse, returning parameter and input gradients.

    loss_grad is dL/d(output of the last recorded op) with matching shape.
    """
    if not tape.records:
        raise ValueError("empty tape")
    g = np.asarray(loss_grad, dtype=np.float64)
    w_grads: list[np.ndarray] = []
    b_grads: list[np.ndarray] = []
    c = tape.constants
    for record in reversed(tape.records):
        kind = record[0]
        if kind == "linear":
            _, x, W = record
            if g.shape != (x.shape[0], W.shape[1]):
                raise ValueError(
                    f"upstream gradient shape {g.shape} does not match layer output "
                    f"({x.shape[0]}, {W.shape[1]})"
                )
            w_grads.append(x.T @ g)
            b_grads.append(g.sum(axis=0))
            g = g @ W.T
        elif kind == "selu":
            g = selu_backward(record[1], g, c)
        elif kind == "elu":
            g = elu_backward(record[1], g, c)
        elif kind == "dropout":
            _, keep, a = record
            g = alpha_dropout_backward(keep, a, g)
        elif kind == "log_softmax":
            logp = record[1]
            g = g - np.exp(logp) * g.sum(axis=1, keepdims=True)
        else:
            raise ValueError(f"unknown tape record kind: {kind!r}")
    w_grads.reverse()
    b_grads.reverse()
    return ParamGrads(weights=w_grads, biases=b_grads, wrt_input=g)
