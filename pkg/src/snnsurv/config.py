"""Run configuration: flat `key = value` files with `#` comments, every key
carrying a documented default, overridable by CLI flags (flag > file >
default). Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .model import CLASSIFICATION, SURVIVAL
from .preprocess import MODALITIES


def _parse_bool(s: str) -> bool:
    token = s.strip().lower()
    if token in ("true", "1", "yes", "on"):
        return True
    if token in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_int_list(s: str) -> tuple[int, ...]:
    parts = [p for p in s.replace(",", " ").split() if p]
    if not parts:
        return ()
    return tuple(int(p) for p in parts)


def _parse_float_list(s: str) -> tuple[float, ...]:
    parts = [p for p in s.replace(",", " ").split() if p]
    return tuple(float(p) for p in parts)


def _parse_str_list(s: str) -> tuple[str, ...]:
    return tuple(p for p in s.replace(",", " ").split() if p)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        token = s.strip()
        if token not in options:
            raise ValueError(f"expected one of {options}, got {s!r}")
        return token

    return parse


def _auto_float(s: str) -> float | None:
    token = s.strip().lower()
    if token == "auto":
        return None
    return float(token)


def _auto_bool(s: str) -> bool | None:
    token = s.strip().lower()
    if token == "auto":
        return None
    return _parse_bool(s)


@dataclass(frozen=True)
class KeySpec:
    parse: Callable[[str], Any]
    default: Any
    help: str


# every run option, its parser, default, and one-line description
KEYS: dict[str, KeySpec] = {
    "data_dir": KeySpec(str, "", "input directory (raw TSVs or an ingested dataset)"),
    "out_dir": KeySpec(str, "runs", "output directory"),
    "task": KeySpec(_choice(SURVIVAL, CLASSIFICATION), SURVIVAL, "prediction endpoint"),
    "seed": KeySpec(int, 0, "root RNG seed"),
    "folds": KeySpec(int, 10, "cross-validation fold count"),
    "stratify": KeySpec(_choice("none", "event", "class"), "none", "fold stratification key"),
    "emit_figures": KeySpec(_parse_bool, True, "render PNG figures next to CSV/JSON reports"),
    # preprocessing
    "quasi_constant_tol": KeySpec(float, 0.998, "modal-value frequency drop threshold"),
    "variance_threshold": KeySpec(float, 0.25, "variance filter threshold (all modalities)"),
    "expression_floor": KeySpec(float, 7.0, "gene-expression peak floor (strict >)"),
    "include_clinical": KeySpec(_parse_bool, True, "append encoded clinical features"),
    "include_stage": KeySpec(_auto_bool, None, "keep the stage feature (auto: survival yes, classification no)"),
    # model / training
    "hidden_widths": KeySpec(_parse_int_list, (1024, 512, 256, 128, 48, 48, 48), "encoder layer widths"),
    "activation": KeySpec(_choice("selu", "elu"), "selu", "block activation"),
    "lr": KeySpec(float, 5.8e-4, "base learning rate"),
    "weight_decay": KeySpec(float, 5.98e-3, "weight decay (weights only)"),
    "dropout": KeySpec(float, 0.1058, "alpha-dropout probability"),
    "batch_size": KeySpec(int, 256, "minibatch size"),
    "epochs": KeySpec(int, 100, "training epochs"),
    "optimizer": KeySpec(_choice("sgd", "adam", "rmsprop", "adamw"), "adam", "optimizer"),
    "lr_policy": KeySpec(_choice("linear", "exp", "step", "plateau", "cosine"), "cosine", "learning-rate schedule"),
    "lambda_cox": KeySpec(_auto_float, None, "Cox loss weight (auto: 1 for survival, 0 otherwise)"),
    "lambda_ce": KeySpec(_auto_float, None, "cross-entropy weight (auto: 1 for classification, 0 otherwise)"),
    "lambda_reg": KeySpec(float, 1e-4, "L1 weight-penalty coefficient"),
    # fine-tuning
    "ft_preset": KeySpec(str, "", "named fine-tune preset (e.g. paper-ft); overrides ft_* keys"),
    "ft_lr": KeySpec(float, 4e-5, "fine-tune learning rate"),
    "ft_weight_decay": KeySpec(float, 0.35, "fine-tune weight decay"),
    "ft_dropout": KeySpec(float, 0.35, "fine-tune dropout"),
    "ft_epochs": KeySpec(int, 10, "fine-tune epochs"),
    "ft_batch_size": KeySpec(int, 16, "fine-tune minibatch size"),
    "ft_frozen_layers": KeySpec(int, 0, "encoder layers pinned from the input side"),
    "ft_additional_layers": KeySpec(int, 0, "fresh square blocks appended before the head"),
    # hyperparameter search
    "hp_trials": KeySpec(int, 20, "random-search trial count"),
    "hp_space": KeySpec(_choice("training", "finetune"), "training", "search-space preset"),
    "hp_fixed_widths": KeySpec(_parse_int_list, (), "pin the architecture during search (empty: sample it)"),
    "hp_epochs": KeySpec(_parse_int_list, (), "override the epochs menu during search (empty: preset)"),
    # stratification / evaluation
    "strat_cuts": KeySpec(_parse_float_list, (33.0, 66.0), "hazard percentile cut points"),
    # synthetic data (generator mode follows `task`)
    "synth_n": KeySpec(int, 2000, "synthetic sample count"),
    "synth_modalities": KeySpec(_parse_str_list, ("dna_methylation", "mirna_expression", "protein_expression"), "synthetic modality names"),
    "synth_widths": KeySpec(_parse_int_list, (250, 150, 100), "per-modality synthetic widths"),
    "synth_informative": KeySpec(int, 20, "nonzero coefficients in the true risk"),
    "synth_hazard_scale": KeySpec(float, 1.0, "risk-spread multiplier"),
    "synth_censoring": KeySpec(float, 0.3, "target censored fraction"),
    "synth_classes": KeySpec(int, 33, "class count (classification mode)"),
    "synth_separation": KeySpec(float, 6.0, "class-mean offset in feature-noise units"),
}


@dataclass
class RunConfig:
    values: dict[str, Any]

    def __getattr__(self, key: str) -> Any:
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def get(self, key: str) -> Any:
        if key not in KEYS:
            raise KeyError(f"unknown config key {key!r}")
        return self.values[key]

    @property
    def resolved_include_stage(self) -> bool:
        if self.values["include_stage"] is not None:
            return self.values["include_stage"]
        return self.values["task"] == SURVIVAL

    def resolved_lambdas(self) -> tuple[float, float, float]:
        survival = self.values["task"] == SURVIVAL
        cox = self.values["lambda_cox"]
        ce = self.values["lambda_ce"]
        return (
            cox if cox is not None else (1.0 if survival else 0.0),
            ce if ce is not None else (0.0 if survival else 1.0),
            self.values["lambda_reg"],
        )


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in KEYS:
            raise ValueError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = KEYS[key].parse(value.strip())
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(
    path: str | Path | None = None, overrides: dict[str, Any] | None = None
) -> RunConfig:
    """Assemble a RunConfig with precedence flag > file > default.

    `overrides` holds already-typed values (from CLI flags); string values
    are run through the key's parser.
    """
    values = {key: spec.default for key, spec in KEYS.items()}
    if path is not None:
        text = Path(path).read_text()
        values.update(parse_config_text(text, source=str(path)))
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = KEYS[key].parse(value) if isinstance(value, str) else value
    return RunConfig(values=values)


def default_config_text() -> str:
    """A fully commented config file with every key at its default."""
    lines = ["# all keys with their defaults; flag > file > default"]
    for key, spec in KEYS.items():
        default = spec.default
        if default is None:
            rendered = "auto"
        elif isinstance(default, tuple):
            rendered = ",".join(str(v) for v in default)
        elif isinstance(default, bool):
            rendered = "true" if default else "false"
        else:
            rendered = str(default)
        lines.append(f"{key} = {rendered}  # {spec.help}")
    return "\n".join(lines) + "\n"
