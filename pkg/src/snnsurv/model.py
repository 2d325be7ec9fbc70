"""Self-normalizing encoder (stacked linear -> activation -> alpha-dropout
blocks ending in a patient embedding) with swappable survival and
classification heads.

The survival head maps the embedding to one hazard score per sample (higher
score = higher risk, earlier expected event). The classification head maps
it to per-class log-probabilities via log-softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import ActivationConstants, GradTape, SELU_CONSTANTS

SURVIVAL = "survival"
CLASSIFICATION = "classification"

PAPER_HIDDEN_WIDTHS = (1024, 512, 256, 128, 48, 48, 48)


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden_widths: tuple[int, ...] = PAPER_HIDDEN_WIDTHS
    dropout_p: float = 0.0
    activation: str = "selu"

    def __post_init__(self) -> None:
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if not self.hidden_widths:
            raise ValueError("hidden_widths must be non-empty")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError(f"zero-width layer in {self.hidden_widths}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.activation not in ("selu", "elu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))

    @property
    def embedding_dim(self) -> int:
        return self.hidden_widths[-1]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "dropout_p": self.dropout_p,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_widths=tuple(int(w) for w in d["hidden_widths"]),
            dropout_p=float(d.get("dropout_p", 0.0)),
            activation=str(d.get("activation", "selu")),
        )


@dataclass
class ModelParams:
    """Per-layer weights/biases for the encoder plus the head (last entry)."""

    config: EncoderConfig
    head: str
    n_outputs: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    constants: ActivationConstants = SELU_CONSTANTS

    def __post_init__(self) -> None:
        if self.head not in (SURVIVAL, CLASSIFICATION):
            raise ValueError(f"unknown head kind {self.head!r}")
        expected = layer_shapes(self.config, self.head, self.n_outputs)
        got = [w.shape for w in self.weights]
        if got != expected:
            raise ValueError(f"weight shapes {got} do not chain as {expected}")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ValueError(f"bias shape {b.shape} does not match weight {w.shape}")

    @property
    def depth(self) -> int:
        """Number of hidden (encoder) layers, excluding the head."""
        return len(self.config.hidden_widths)

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            head=self.head,
            n_outputs=self.n_outputs,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            constants=self.constants,
        )


@dataclass
class Prediction:
    embedding: np.ndarray
    hazard: np.ndarray | None = None
    log_probs: np.ndarray | None = None

    @property
    def vector(self) -> np.ndarray:
        """The per-sample prediction the task scores (hazard or log-probs)."""
        return self.hazard if self.hazard is not None else self.log_probs


def layer_shapes(cfg: EncoderConfig, head: str, n_outputs: int) -> list[tuple[int, int]]:
    dims = [cfg.input_dim, *cfg.hidden_widths]
    shapes = [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
    shapes.append((cfg.embedding_dim, n_outputs))
    return shapes


def head_outputs(head: str, n_classes: int = 1) -> int:
    if head == SURVIVAL:
        return 1
    if head == CLASSIFICATION:
        if n_classes < 2:
            raise ValueError(f"classification needs >= 2 classes, got {n_classes}")
        return n_classes
    raise ValueError(f"unknown head kind {head!r}")


def init_params(
    cfg: EncoderConfig,
    head: str,
    seed: int,
    n_classes: int = 1,
    constants: ActivationConstants = SELU_CONSTANTS,
) -> ModelParams:
    """Draw weights N(0, 1/fan_in) per layer, biases zero.

    The 1/fan_in variance is what keeps the self-normalizing fixed point:
    unit-variance inputs stay near unit variance through every block.
    """
    n_out = head_outputs(head, n_classes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, width in layer_shapes(cfg, head, n_out):
        weights.append(rng.standard_normal((n_in, width)) / np.sqrt(n_in))
        biases.append(np.zeros(width))
    return ModelParams(
        config=cfg, head=head, n_outputs=n_out, weights=weights, biases=biases,
        constants=constants,
    )


def param_count(cfg: EncoderConfig, head: str | None = SURVIVAL, n_classes: int = 1) -> int:
    """Total trainable scalars: sum over layers of n_in*n_out + n_out.

    head=None counts the encoder alone.
    """
    dims = [cfg.input_dim, *cfg.hidden_widths]
    total = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))
    if head is not None:
        n_out = head_outputs(head, n_classes)
        total += cfg.embedding_dim * n_out + n_out
    return total


def _run_blocks(
    params: ModelParams,
    batch: np.ndarray,
    training: bool,
    rng: np.random.Generator | None,
    tape: GradTape | None,
) -> np.ndarray:
    cfg = params.config
    act = nn.selu if cfg.activation == "selu" else nn.elu
    h = np.asarray(batch, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != cfg.input_dim:
        raise ValueError(f"batch shape {h.shape} does not match input_dim {cfg.input_dim}")
    a_scale = nn.alpha_dropout_coeffs(cfg.dropout_p, params.constants)[0]
    for i in range(params.depth):
        z = nn.linear_forward(h, params.weights[i], params.biases[i], tape)
        if tape is not None:
            tape.add(cfg.activation, z)
        h = act(z, params.constants)
        h, keep = nn.alpha_dropout(h, cfg.dropout_p, training, rng, params.constants)
        if tape is not None and training and cfg.dropout_p > 0.0:
            tape.add("dropout", keep, a_scale)
    return h


def forward(
    params: ModelParams,
    batch: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Prediction, GradTape]:
    """Run the encoder blocks then the head; returns the prediction and the
    tape needed to backpropagate a loss gradient through all layers."""
    tape = GradTape(constants=params.constants)
    h = _run_blocks(params, batch, training, rng, tape)
    out = nn.linear_forward(h, params.weights[-1], params.biases[-1], tape)
    if params.head == SURVIVAL:
        pred = Prediction(embedding=h, hazard=out[:, 0])
    else:
        logp = nn.log_softmax(out)
        tape.add("log_softmax", logp)
        pred = Prediction(embedding=h, log_probs=logp)
    return pred, tape


def embed(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Inference-mode output of the last hidden block (the patient embedding)."""
    return _run_blocks(params, batch, training=False, rng=None, tape=None)
