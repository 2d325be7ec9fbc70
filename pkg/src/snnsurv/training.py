"""Training harness: optimizers, learning-rate schedules, k-fold plans,
per-fold training with best-epoch checkpointing, checkpoint ensembling,
fine-tuning with layer freezing, and random hyperparameter search.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from . import metrics, model, nn
from .model import CLASSIFICATION, SURVIVAL, EncoderConfig, ModelParams
from .preprocess import CohortDataset

OPTIMIZERS = ("sgd", "adam", "rmsprop", "adamw")
LR_POLICIES = ("linear", "exp", "step", "plateau", "cosine")

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
RMSPROP_ALPHA = 0.99
PLATEAU_PATIENCE = 5
PLATEAU_FACTOR = 0.5
EXP_GAMMA = 0.95


class DivergenceError(RuntimeError):
    """Non-finite loss or gradient; carries where it happened."""


@dataclass(frozen=True)
class TrainConfig:
    task: str = SURVIVAL
    lr: float = 5.8e-4
    weight_decay: float = 0.0
    dropout_p: float = 0.1
    batch_size: int = 256
    epochs: int = 50
    optimizer: str = "adam"
    lr_policy: str = "cosine"
    hidden_widths: tuple[int, ...] = (256, 128, 48)
    activation: str = "selu"
    loss_weights: L.LossWeights | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.task not in (SURVIVAL, CLASSIFICATION):
            raise ValueError(f"unknown task {self.task!r}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_policy not in LR_POLICIES:
            raise ValueError(f"unknown lr policy {self.lr_policy!r}")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))

    def resolved_weights(self) -> L.LossWeights:
        if self.loss_weights is not None:
            w = self.loss_weights
        elif self.task == SURVIVAL:
            w = L.SURVIVAL_WEIGHTS
        else:
            w = L.CLASSIFICATION_WEIGHTS
        if w.lambda_cox == 0.0 and w.lambda_ce == 0.0:
            raise ValueError("a training run needs lambda_cox or lambda_ce positive")
        return w

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


# ---------------------------------------------------------------------------
# fold plans
# ---------------------------------------------------------------------------


@dataclass
class FoldPlan:
    """k disjoint validation index sets partitioning range(n)."""

    folds: list[np.ndarray]
    n: int
    stratify: str = "none"

    @property
    def k(self) -> int:
        return len(self.folds)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n), self.folds[fold])


def make_folds(
    n: int, k: int, seed: int, stratify: np.ndarray | None = None, stratify_name: str = "none"
) -> FoldPlan:
    """Deterministic shuffled k-fold partition.

    With a stratification key, each stratum is shuffled and dealt round-robin
    so per-fold counts of every key value differ by at most one. Strata
    smaller than k trigger a warning and are balanced best-effort.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(k)]
    if stratify is None:
        perm = rng.permutation(n)
        for i, idx in enumerate(perm):
            buckets[i % k].append(int(idx))
    else:
        stratify = np.asarray(stratify)
        if stratify.shape != (n,):
            raise ValueError(f"stratify key shape {stratify.shape} != ({n},)")
        cursor = 0
        for value in np.unique(stratify):
            members = np.flatnonzero(stratify == value)
            if members.size < k:
                warnings.warn(
                    f"stratum {value!r} has {members.size} < k={k} samples; "
                    "balancing best-effort",
                    stacklevel=2,
                )
            members = rng.permutation(members)
            for idx in members:
                buckets[cursor % k].append(int(idx))
                cursor += 1
        if stratify_name == "none":
            stratify_name = "key"
    folds = [np.sort(np.asarray(b, dtype=np.int64)) for b in buckets]
    return FoldPlan(folds=folds, n=n, stratify=stratify_name)


# ---------------------------------------------------------------------------
# optimizers and schedules
# ---------------------------------------------------------------------------


@dataclass
class OptState:
    step: int = 0
    m: list[np.ndarray] | None = None   # first moments (adam family)
    v: list[np.ndarray] | None = None   # second moments / rmsprop accumulator


def _flat_params(params: ModelParams) -> list[np.ndarray]:
    # interleaved [W0, b0, W1, b1, ...]; even slots are weights
    out: list[np.ndarray] = []
    for w, b in zip(params.weights, params.biases):
        out.extend((w, b))
    return out


def optimizer_step(
    params: ModelParams,
    grads: nn.ParamGrads,
    state: OptState,
    optimizer: str,
    lr: float,
    weight_decay: float = 0.0,
    frozen_layers: frozenset[int] | set[int] = frozenset(),
) -> None:
    """Apply one in-place update. adam/adamw use betas (0.9, 0.999) and
    eps 1e-8; adamw decouples the decay, the rest fold it into the gradient.
    Weight decay touches weights only, never biases (bias shrinkage fights
    the self-normalizing fixed point). Frozen layers are skipped entirely.
    """
    if optimizer not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {optimizer!r}")
    tensors = _flat_params(params)
    grad_list: list[np.ndarray] = []
    for w, b in zip(grads.weights, grads.biases):
        grad_list.extend((w, b))
    if len(grad_list) != len(tensors):
        raise ValueError("gradient count does not match parameter count")
    state.step += 1
    for slot, g in enumerate(grad_list):
        layer = slot // 2
        if not np.all(np.isfinite(g)):
            raise DivergenceError(
                f"non-finite gradient in layer {layer} at optimizer step {state.step}"
            )
        if layer in frozen_layers:
            continue
        p = tensors[slot]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        wd = weight_decay if slot % 2 == 0 else 0.0
        if optimizer == "sgd":
            p -= lr * (g + wd * p)
            continue
        if state.m is None:
            state.m = [np.zeros_like(t) for t in tensors]
            state.v = [np.zeros_like(t) for t in tensors]
        m, v = state.m[slot], state.v[slot]
        if optimizer == "rmsprop":
            geff = g + wd * p
            v *= RMSPROP_ALPHA
            v += (1.0 - RMSPROP_ALPHA) * geff * geff
            p -= lr * geff / (np.sqrt(v) + ADAM_EPS)
            continue
        geff = g + wd * p if optimizer == "adam" else g
        b1, b2 = ADAM_BETAS
        m *= b1
        m += (1.0 - b1) * geff
        v *= b2
        v += (1.0 - b2) * geff * geff
        mhat = m / (1.0 - b1 ** state.step)
        vhat = v / (1.0 - b2 ** state.step)
        p -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
        if optimizer == "adamw":
            p -= lr * wd * p


def lr_schedule(
    policy: str,
    base_lr: float,
    epoch: int,
    total_epochs: int,
    plateau_halvings: int = 0,
    gamma: float = EXP_GAMMA,
) -> float:
    """Per-epoch learning rate.

    linear: affine base -> 0; exp: base * gamma^epoch; step: x0.1 every
    total/3 epochs; plateau: x0.5 per recorded stall (driven by the caller's
    validation tracking); cosine: half-cosine from base to ~0.
    """
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if policy == "linear":
        return base_lr * (1.0 - epoch / total_epochs)
    if policy == "exp":
        return base_lr * gamma**epoch
    if policy == "step":
        return base_lr * 0.1 ** (epoch // max(1, total_epochs // 3))
    if policy == "plateau":
        return base_lr * PLATEAU_FACTOR**plateau_halvings
    if policy == "cosine":
        return base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0
    raise ValueError(f"unknown lr policy {policy!r}")


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


@dataclass
class FoldResult:
    fold: int
    status: str                      # "ok" | "diverged" | "non_admissible"
    params: ModelParams | None
    best_epoch: int = -1
    best_metric: float = float("nan")
    history: list[dict] = field(default_factory=list)
    diagnostics: str = ""


@dataclass
class TrainResult:
    task: str
    folds: list[FoldResult]

    @property
    def ok_folds(self) -> list[FoldResult]:
        return [f for f in self.folds if f.status == "ok"]

    @property
    def history(self) -> list[dict]:
        return [row for f in self.folds for row in f.history]


def _epoch_metric(params: ModelParams, dataset: CohortDataset, idx: np.ndarray, task: str) -> float:
    pred, _ = model.forward(params, dataset.X[idx], training=False)
    if task == SURVIVAL:
        return metrics.concordance_index(pred.hazard, dataset.survival.subset(idx))
    return float((pred.log_probs.argmax(axis=1) == dataset.class_labels[idx]).mean())


def _train_one_fold(
    params: ModelParams,
    dataset: CohortDataset,
    cfg: TrainConfig,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    rng: np.random.Generator,
    fold: int,
    frozen_layers: frozenset[int] = frozenset(),
) -> FoldResult:
    weights = cfg.resolved_weights()
    opt_state = OptState()
    best_metric = -np.inf
    best_epoch = -1
    best_params: ModelParams | None = None
    since_improve = 0
    halvings = 0
    history: list[dict] = []
    try:
        for epoch in range(cfg.epochs):
            lr = lr_schedule(cfg.lr_policy, cfg.lr, epoch, cfg.epochs, halvings)
            order = rng.permutation(train_idx.size)
            epoch_loss = 0.0
            for start in range(0, train_idx.size, cfg.batch_size):
                batch = train_idx[order[start : start + cfg.batch_size]]
                pred, tape = model.forward(params, dataset.X[batch], training=True, rng=rng)
                survival = dataset.survival.subset(batch) if weights.lambda_cox > 0 else None
                class_labels = dataset.class_labels[batch] if weights.lambda_ce > 0 else None
                loss = L.combined_loss(pred, weights, params, survival, class_labels)
                if not np.isfinite(loss):
                    raise DivergenceError(
                        f"non-finite loss in fold {fold}, epoch {epoch}"
                    )
                grads = nn.backward(tape, L.output_grad(pred, weights, survival, class_labels))
                if weights.lambda_reg > 0:
                    for gw, sub in zip(grads.weights, L.l1_reg_grad(params)):
                        gw += weights.lambda_reg * sub
                optimizer_step(
                    params, grads, opt_state, cfg.optimizer, lr,
                    cfg.weight_decay, frozen_layers,
                )
                epoch_loss += loss * batch.size
            epoch_loss /= train_idx.size
            try:
                metric = _epoch_metric(params, dataset, val_idx, cfg.task)
            except metrics.NonAdmissibleError as exc:
                return FoldResult(
                    fold=fold, status="non_admissible", params=None,
                    history=history, diagnostics=str(exc),
                )
            history.append(
                {
                    "fold": fold,
                    "epoch": epoch,
                    "lr": lr,
                    "train_loss": epoch_loss,
                    "val_metric": metric,
                }
            )
            if metric > best_metric:
                best_metric = metric
                best_epoch = epoch
                best_params = params.copy()
                since_improve = 0
            else:
                since_improve += 1
                if cfg.lr_policy == "plateau" and since_improve >= PLATEAU_PATIENCE:
                    halvings += 1
                    since_improve = 0
    except DivergenceError as exc:
        return FoldResult(
            fold=fold, status="diverged", params=None,
            history=history, diagnostics=str(exc),
        )
    return FoldResult(
        fold=fold, status="ok", params=best_params,
        best_epoch=best_epoch, best_metric=float(best_metric), history=history,
    )


def _fold_streams(seed: int, k: int) -> list[tuple[int, np.random.Generator]]:
    """Per-fold (init seed, loop rng) pairs from non-overlapping child streams,
    so fold jobs could run in parallel without sharing state."""
    children = np.random.SeedSequence(seed).spawn(k)
    out = []
    for child in children:
        init_ss, loop_ss = child.spawn(2)
        out.append((int(init_ss.generate_state(1, dtype=np.uint64)[0]), np.random.default_rng(loop_ss)))
    return out


def train(dataset: CohortDataset, cfg: TrainConfig, plan: FoldPlan) -> TrainResult:
    """Train one model per fold, keeping the epoch with the best validation
    metric (concordance for survival, accuracy for classification)."""
    if plan.n != dataset.n_samples:
        raise ValueError(f"fold plan covers {plan.n} samples, dataset has {dataset.n_samples}")
    cfg.resolved_weights()
    n_classes = max(len(dataset.class_names), 2)
    results = []
    streams = _fold_streams(cfg.seed, plan.k)
    for fold in range(plan.k):
        init_seed, rng = streams[fold]
        encoder_cfg = EncoderConfig(
            input_dim=dataset.n_features,
            hidden_widths=cfg.hidden_widths,
            dropout_p=cfg.dropout_p,
            activation=cfg.activation,
        )
        head = SURVIVAL if cfg.task == SURVIVAL else CLASSIFICATION
        params = model.init_params(encoder_cfg, head, init_seed, n_classes=n_classes)
        results.append(
            _train_one_fold(
                params, dataset, cfg, plan.train_indices(fold), plan.folds[fold], rng, fold
            )
        )
    return TrainResult(task=cfg.task, folds=results)


# ---------------------------------------------------------------------------
# ensembling
# ---------------------------------------------------------------------------


def ensemble_predict(checkpoints: list[ModelParams], X: np.ndarray) -> model.Prediction:
    """Average the per-model prediction vectors: hazards arithmetically,
    class predictions in probability space (then back to log)."""
    if not checkpoints:
        raise ValueError("ensemble needs at least one checkpoint")
    first = checkpoints[0]
    signature = ([w.shape for w in first.weights], first.head)
    for m in checkpoints[1:]:
        if ([w.shape for w in m.weights], m.head) != signature:
            raise ValueError("ensemble checkpoints must share architecture and task")
    preds = [model.forward(p, X, training=False)[0] for p in checkpoints]
    embedding = np.mean([p.embedding for p in preds], axis=0)
    if first.head == SURVIVAL:
        hazard = np.mean([p.hazard for p in preds], axis=0)
        return model.Prediction(embedding=embedding, hazard=hazard)
    probs = np.mean([np.exp(p.log_probs) for p in preds], axis=0)
    return model.Prediction(embedding=embedding, log_probs=np.log(probs))


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FinetuneConfig:
    frozen_layers: int = 0
    additional_layers: int = 0
    lr: float = 4e-5
    weight_decay: float = 0.35
    dropout_p: float = 0.35
    epochs: int = 10
    batch_size: int = 16
    optimizer: str = "adam"
    lr_policy: str = "linear"
    loss_weights: L.LossWeights | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.frozen_layers < 0 or self.additional_layers < 0:
            raise ValueError("frozen_layers and additional_layers must be >= 0")


def paper_ft_preset(**overrides) -> FinetuneConfig:
    """The published fine-tuning recipe: every layer unfrozen, lr 4e-5,
    weight decay and dropout 0.35, 10 epochs."""
    base = dict(frozen_layers=0, additional_layers=0, lr=4e-5,
                weight_decay=0.35, dropout_p=0.35, epochs=10)
    base.update(overrides)
    return FinetuneConfig(**base)


FINETUNE_PRESETS = {"paper-ft": paper_ft_preset}


def _extend_encoder(base: ModelParams, ft: FinetuneConfig, init_seed: int) -> ModelParams:
    cfg = base.config
    emb = cfg.embedding_dim
    widths = cfg.hidden_widths + (emb,) * ft.additional_layers
    new_cfg = EncoderConfig(
        input_dim=cfg.input_dim,
        hidden_widths=widths,
        dropout_p=ft.dropout_p,
        activation=cfg.activation,
    )
    weights = [w.copy() for w in base.weights[:-1]]
    biases = [b.copy() for b in base.biases[:-1]]
    rng = np.random.default_rng(init_seed)
    for _ in range(ft.additional_layers):
        weights.append(rng.standard_normal((emb, emb)) / np.sqrt(emb))
        biases.append(np.zeros(emb))
    weights.append(base.weights[-1].copy())
    biases.append(base.biases[-1].copy())
    return ModelParams(
        config=new_cfg, head=base.head, n_outputs=base.n_outputs,
        weights=weights, biases=biases, constants=base.constants,
    )


def finetune(
    base: ModelParams, dataset: CohortDataset, ft: FinetuneConfig, plan: FoldPlan
) -> TrainResult:
    """Resume from a checkpoint with the first `frozen_layers` encoder layers
    pinned (bit-identical afterwards) and optional fresh square blocks
    appended before the head."""
    if ft.frozen_layers > base.depth:
        raise ValueError(
            f"frozen_layers {ft.frozen_layers} exceeds encoder depth {base.depth}"
        )
    if dataset.n_features != base.config.input_dim:
        raise ValueError(
            f"dataset width {dataset.n_features} != checkpoint input_dim "
            f"{base.config.input_dim} (feature remapping is unsupported)"
        )
    task = SURVIVAL if base.head == SURVIVAL else CLASSIFICATION
    cfg = TrainConfig(
        task=task, lr=ft.lr, weight_decay=ft.weight_decay, dropout_p=ft.dropout_p,
        batch_size=ft.batch_size, epochs=ft.epochs, optimizer=ft.optimizer,
        lr_policy=ft.lr_policy, hidden_widths=base.config.hidden_widths,
        activation=base.config.activation, loss_weights=ft.loss_weights, seed=ft.seed,
    )
    frozen = frozenset(range(ft.frozen_layers))
    results = []
    streams = _fold_streams(ft.seed, plan.k)
    for fold in range(plan.k):
        init_seed, rng = streams[fold]
        params = _extend_encoder(base, ft, init_seed)
        results.append(
            _train_one_fold(
                params, dataset, cfg, plan.train_indices(fold), plan.folds[fold],
                rng, fold, frozen_layers=frozen,
            )
        )
    return TrainResult(task=task, folds=results)


# ---------------------------------------------------------------------------
# random hyperparameter search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchSpace:
    """Sampling ranges: log-uniform for lr / weight decay, uniform for
    dropout, categorical for the discrete rows."""

    lr: tuple[float, float] = (1e-6, 1e-1)
    weight_decay: tuple[float, float] = (1e-6, 1e-1)
    dropout: tuple[float, float] = (0.1, 0.65)
    batch_size: tuple[int, ...] = (64, 128, 256, 512)
    epochs: tuple[int, ...] = (50, 100)
    n_layers: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8, 9)
    layer_widths: tuple[int, ...] = (2048, 1024, 512, 256, 128, 48, 32)
    optimizer: tuple[str, ...] = ("adam", "sgd", "rmsprop", "adamw")
    lr_policy: tuple[str, ...] = ("linear", "exp", "step", "plateau", "cosine")
    fixed_widths: tuple[int, ...] | None = None   # skip architecture sampling

    def __post_init__(self) -> None:
        for name in ("batch_size", "epochs", "n_layers", "layer_widths", "optimizer", "lr_policy"):
            if not getattr(self, name):
                raise ValueError(f"empty search dimension {name!r}")


FINETUNE_EPOCHS = (8, 10, 15, 20, 30)

TRAINING_SPACE = SearchSpace()
FINETUNE_SPACE = SearchSpace(
    lr=(1e-8, 1e-3), weight_decay=(1e-4, 1e-2), dropout=(0.05, 0.45),
    batch_size=(8, 16, 32, 48), epochs=FINETUNE_EPOCHS, optimizer=("adam", "adamw"),
    lr_policy=("linear", "exp", "plateau"),
)


def sample_config(space: SearchSpace, rng: np.random.Generator, task: str, seed: int) -> TrainConfig:
    def log_uniform(lo: float, hi: float) -> float:
        return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))

    if space.fixed_widths is not None:
        widths = tuple(space.fixed_widths)
    else:
        depth = int(rng.choice(space.n_layers))
        # funnel constraint: widths drawn from the menu, sorted wide -> narrow
        widths = tuple(sorted((int(w) for w in rng.choice(space.layer_widths, size=depth)), reverse=True))
    return TrainConfig(
        task=task,
        lr=log_uniform(*space.lr),
        weight_decay=log_uniform(*space.weight_decay),
        dropout_p=float(rng.uniform(*space.dropout)),
        batch_size=int(rng.choice(space.batch_size)),
        epochs=int(rng.choice(space.epochs)),
        optimizer=str(rng.choice(space.optimizer)),
        lr_policy=str(rng.choice(space.lr_policy)),
        hidden_widths=widths,
        seed=seed,
    )


def random_search(
    dataset: CohortDataset,
    plan: FoldPlan,
    space: SearchSpace,
    n_trials: int,
    seed: int,
    task: str = SURVIVAL,
    fold: int = 0,
) -> list[dict]:
    """Sample n_trials configs, train each on a single fold, and rank by the
    fold's best validation metric (descending). Configs are drawn up front
    from one seeded stream, so the trial sequence depends only on the seed.
    """
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    rng = np.random.default_rng(seed)
    configs = [sample_config(space, rng, task, seed=seed + t) for t in range(n_trials)]
    trials = []
    for t, cfg in enumerate(configs):
        result = train(dataset, cfg, FoldPlan([plan.folds[fold]], plan.n, plan.stratify))
        fr = result.folds[0]
        trials.append(
            {
                "trial": t,
                "config": config_as_dict(cfg),
                "status": fr.status,
                "metric": fr.best_metric if fr.status == "ok" else None,
                "best_epoch": fr.best_epoch,
            }
        )
    trials.sort(key=lambda tr: (tr["metric"] is None, -(tr["metric"] or 0.0), tr["trial"]))
    return trials


def config_as_dict(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["hidden_widths"] = list(cfg.hidden_widths)
    if cfg.loss_weights is not None:
        d["loss_weights"] = dataclasses.asdict(cfg.loss_weights)
    return d
