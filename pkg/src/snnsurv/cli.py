"""Command-line surface.

Subcommands: synth, ingest, train, evaluate, ensemble, finetune, stratify,
hpsearch. Global flags (--config/--seed/--out/--task/--data) are accepted
after any subcommand and override config-file values, which override
defaults. Every subcommand prints a JSON summary on success. Exit codes:
0 success, 1 runtime failure (structured error on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, dataio, metrics, report, synth, training
from .config import RunConfig, load_config
from .dataio import DataFormatError
from .losses import LossWeights, SurvivalLabels
from .metrics import NonAdmissibleError, RISK_GROUP_NAMES
from .model import CLASSIFICATION, SURVIVAL, ModelParams, forward
from .preprocess import CohortDataset, PreprocessConfig
from .synth import SyntheticSpec
from .training import DivergenceError, FoldPlan, TrainConfig, TrainResult


def _print_json(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _build_config(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "task", None) is not None:
        overrides["task"] = args.task
    if getattr(args, "data", None) is not None:
        overrides["data_dir"] = args.data
    return load_config(getattr(args, "config", None), overrides)


def _require_data(cfg: RunConfig) -> Path:
    if not cfg.data_dir:
        raise ValueError("a data directory is required (--data or config data_dir)")
    return Path(cfg.data_dir)


def _load_dataset(cfg: RunConfig) -> CohortDataset:
    path = _require_data(cfg)
    if not (path / dataio.MATRIX_FILENAME).exists():
        raise DataFormatError(
            f"{path}: no {dataio.MATRIX_FILENAME} found; run `ingest` first"
        )
    return dataio.load_dataset(path)[0]


def _train_config(cfg: RunConfig, task: str | None = None) -> TrainConfig:
    task = task or cfg.task
    lam_cox, lam_ce, lam_reg = cfg.resolved_lambdas()
    return TrainConfig(
        task=task,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        dropout_p=cfg.dropout,
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        optimizer=cfg.optimizer,
        lr_policy=cfg.lr_policy,
        hidden_widths=tuple(cfg.hidden_widths),
        activation=cfg.activation,
        loss_weights=LossWeights(lam_cox, lam_ce, lam_reg),
        seed=cfg.seed,
    )


def _fold_plan(cfg: RunConfig, dataset: CohortDataset, task: str) -> FoldPlan:
    key = None
    name = cfg.stratify
    if name == "event":
        key = dataset.survival.event
    elif name == "class":
        key = dataset.class_labels
    return training.make_folds(
        dataset.n_samples, cfg.folds, cfg.seed, stratify=key, stratify_name=name
    )


def _write_history(out_dir: Path, result: TrainResult) -> Path:
    lines = [json.dumps(row, sort_keys=True) for row in result.history]
    path = out_dir / "history.jsonl"
    dataio.atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))
    return path


def _save_fold_checkpoints(
    out_dir: Path, result: TrainResult, cfg: RunConfig, prefix: str = "fold"
) -> list[str]:
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for fr in result.folds:
        if fr.status != "ok":
            continue
        path = ckpt_dir / f"{prefix}_{fr.fold:02d}.snmo"
        checkpoint.save(
            fr.params,
            path,
            sidecar={
                "seed": cfg.seed,
                "fold": fr.fold,
                "task": result.task,
                "metrics": {"best_val_metric": fr.best_metric, "best_epoch": fr.best_epoch},
            },
        )
        paths.append(str(path))
    return paths


def _fold_summaries(result: TrainResult) -> list[dict]:
    return [
        {
            "fold": fr.fold,
            "status": fr.status,
            "best_epoch": fr.best_epoch,
            "best_val_metric": None if np.isnan(fr.best_metric) else fr.best_metric,
            "diagnostics": fr.diagnostics,
        }
        for fr in result.folds
    ]


def _load_checkpoints(paths: list[str]) -> list[ModelParams]:
    if not paths:
        raise ValueError("at least one --checkpoint is required")
    return [checkpoint.load(p)[0] for p in paths]


def _predict(params_list: list[ModelParams], X: np.ndarray):
    if len(params_list) == 1:
        return forward(params_list[0], X, training=False)[0]
    return training.ensemble_predict(params_list, X)


def _median_split_logrank(hazard: np.ndarray, labels: SurvivalLabels):
    """Two-group significance of a hazard ranking: split at the median score
    and log-rank the groups."""
    cut = float(np.median(hazard))
    high = hazard > cut
    if not high.any() or high.all():
        return None, None
    try:
        chi2, p = metrics.logrank_test(labels.subset(~high), labels.subset(high))
    except NonAdmissibleError:
        return None, None
    return chi2, p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    names = list(cfg.synth_modalities)
    widths = list(cfg.synth_widths)
    if len(names) != len(widths):
        raise ValueError(
            f"synth_modalities ({len(names)}) and synth_widths ({len(widths)}) "
            "must have the same length"
        )
    spec = SyntheticSpec(
        n_samples=cfg.synth_n,
        modality_widths=dict(zip(names, widths)),
        n_informative=cfg.synth_informative,
        hazard_scale=cfg.synth_hazard_scale,
        censoring_rate=cfg.synth_censoring,
        mode=cfg.task,
        n_classes=cfg.synth_classes,
        class_separation=cfg.synth_separation,
        seed=cfg.seed,
    )
    summary = synth.generate(spec, cfg.out_dir)
    _print_json(summary)
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    data_dir = _require_data(cfg)
    pre = PreprocessConfig(
        quasi_constant_tol=cfg.quasi_constant_tol,
        variance_threshold=cfg.variance_threshold,
        expression_floor=cfg.expression_floor,
    )
    dataset, manifest = dataio.ingest(
        data_dir, pre,
        include_stage=cfg.resolved_include_stage,
        include_clinical=cfg.include_clinical,
    )
    out = dataio.write_dataset(dataset, manifest, cfg.out_dir)
    _print_json(
        {
            "out_dir": str(out),
            "rows": dataset.n_samples,
            "cols": dataset.n_features,
            "modalities": {m: dataset.feature_space.width(m) for m in dataset.feature_space.modalities},
            "classes": dataset.class_names,
            "dropped_features": sum(
                len(entries)
                for per_modality in manifest["drop_ledger"].values()
                for entries in per_modality.values()
            ),
        }
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    dataset = _load_dataset(cfg)
    tcfg = _train_config(cfg)
    plan = _fold_plan(cfg, dataset, tcfg.task)
    result = training.train(dataset, tcfg, plan)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = _save_fold_checkpoints(out_dir, result, cfg)
    _write_history(out_dir, result)
    ok = result.ok_folds
    summary = {
        "task": tcfg.task,
        "folds": _fold_summaries(result),
        "mean_val_metric": float(np.mean([f.best_metric for f in ok])) if ok else None,
        "checkpoints": paths,
        "history": str(out_dir / "history.jsonl"),
    }
    dataio.write_json(out_dir / "train_summary.json", summary)
    _print_json(summary)
    return 0


def _evaluate_payload(
    cfg: RunConfig,
    params_list: list[ModelParams],
    dataset: CohortDataset,
    ensemble: bool,
) -> tuple[dict, list]:
    X = dataset.X
    pred = _predict(params_list, X)
    task = SURVIVAL if params_list[0].head == SURVIVAL else CLASSIFICATION
    if task == SURVIVAL:
        hazard = pred.hazard
        c_index = metrics.concordance_index(hazard, dataset.survival)
        chi2, p = _median_split_logrank(hazard, dataset.survival)
        payload = {
            "task": task,
            "n_samples": dataset.n_samples,
            "c_index": c_index,
            "logrank_chi2": chi2,
            "logrank_p": p,
        }
        if ensemble:
            per_model = []
            for m in params_list:
                h = forward(m, X, training=False)[0].hazard
                per_model.append(metrics.concordance_index(h, dataset.survival))
            payload["per_checkpoint_c_index"] = per_model
            payload["mean_per_checkpoint_c_index"] = float(np.mean(per_model))
        cut = float(np.median(hazard))
        groups = hazard > cut
        curves = []
        if groups.any() and not groups.all():
            curves = [
                ("below_median", metrics.km_estimator(dataset.survival.subset(~groups))),
                ("above_median", metrics.km_estimator(dataset.survival.subset(groups))),
            ]
        return payload, curves
    labels = dataset.class_labels
    pred_ids = pred.log_probs.argmax(axis=1)
    cls = metrics.classification_report(pred_ids, labels, len(dataset.class_names))
    payload = {
        "task": task,
        "n_samples": dataset.n_samples,
        "accuracy": cls.accuracy,
        "classification": report.classification_payload(cls, dataset.class_names),
    }
    if ensemble:
        per_model = []
        for m in params_list:
            ids = forward(m, X, training=False)[0].log_probs.argmax(axis=1)
            per_model.append(float((ids == labels).mean()))
        payload["per_checkpoint_accuracy"] = per_model
        payload["mean_per_checkpoint_accuracy"] = float(np.mean(per_model))
    return payload, [cls]


def _run_evaluation(args: argparse.Namespace, ensemble: bool) -> int:
    cfg = _build_config(args)
    dataset = _load_dataset(cfg)
    params_list = _load_checkpoints(args.checkpoint)
    if ensemble and len(params_list) < 2:
        raise ValueError("ensemble requires at least two --checkpoint paths")
    payload, extra = _evaluate_payload(cfg, params_list, dataset, ensemble)
    out_dir = Path(cfg.out_dir)
    if payload["task"] == SURVIVAL:
        report.emit_survival_report(out_dir, payload, extra, figures=cfg.emit_figures)
    else:
        report.emit_classification_report(
            out_dir, payload, extra[0], dataset.class_names, figures=cfg.emit_figures
        )
    _print_json(payload)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    return _run_evaluation(args, ensemble=False)


def cmd_ensemble(args: argparse.Namespace) -> int:
    return _run_evaluation(args, ensemble=True)


def cmd_stratify(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    dataset = _load_dataset(cfg)
    params_list = _load_checkpoints(args.checkpoint)
    pred = _predict(params_list, dataset.X)
    if pred.hazard is None:
        raise ValueError("stratify needs a survival checkpoint")
    cuts = tuple(cfg.strat_cuts)
    if len(cuts) != 2:
        raise ValueError(f"strat_cuts must be two percentiles, got {cuts}")
    groups = metrics.stratify_percentile(pred.hazard, cuts)
    curves = []
    for g, name in enumerate(RISK_GROUP_NAMES):
        idx = groups.indices(g)
        if idx.size:
            curves.append((name, metrics.km_estimator(dataset.survival.subset(idx))))
    pairwise = {}
    for a, b in ((0, 1), (0, 2), (1, 2)):
        key = f"{RISK_GROUP_NAMES[a]}_vs_{RISK_GROUP_NAMES[b]}"
        ia, ib = groups.indices(a), groups.indices(b)
        if ia.size == 0 or ib.size == 0:
            pairwise[key] = {"chi2": None, "p": None}
            continue
        try:
            chi2, p = metrics.logrank_test(
                dataset.survival.subset(ia), dataset.survival.subset(ib)
            )
            pairwise[key] = {"chi2": chi2, "p": p}
        except NonAdmissibleError:
            pairwise[key] = {"chi2": None, "p": None}
    payload = {
        "task": SURVIVAL,
        "n_samples": dataset.n_samples,
        "cuts_percentile": list(groups.percentiles),
        "cut_values": list(groups.cut_values),
        "group_sizes": dict(zip(RISK_GROUP_NAMES, groups.sizes)),
        "degenerate": groups.degenerate,
        "logrank": pairwise,
    }
    report.emit_survival_report(Path(cfg.out_dir), payload, curves, figures=cfg.emit_figures)
    _print_json(payload)
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    dataset = _load_dataset(cfg)
    base, _ = checkpoint.load(args.checkpoint[0])
    preset = args.preset or cfg.ft_preset
    if preset:
        if preset not in training.FINETUNE_PRESETS:
            raise ValueError(
                f"unknown preset {preset!r}; available: {sorted(training.FINETUNE_PRESETS)}"
            )
        ft = training.FINETUNE_PRESETS[preset](seed=cfg.seed, batch_size=cfg.ft_batch_size)
    else:
        ft = training.FinetuneConfig(
            frozen_layers=cfg.ft_frozen_layers,
            additional_layers=cfg.ft_additional_layers,
            lr=cfg.ft_lr,
            weight_decay=cfg.ft_weight_decay,
            dropout_p=cfg.ft_dropout,
            epochs=cfg.ft_epochs,
            batch_size=cfg.ft_batch_size,
            seed=cfg.seed,
        )
    plan = _fold_plan(cfg, dataset, cfg.task)
    result = training.finetune(base, dataset, ft, plan)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = _save_fold_checkpoints(out_dir, result, cfg, prefix="ft_fold")
    _write_history(out_dir, result)
    ok = result.ok_folds
    summary = {
        "task": result.task,
        "preset": preset or None,
        "frozen_layers": ft.frozen_layers,
        "additional_layers": ft.additional_layers,
        "folds": _fold_summaries(result),
        "mean_val_metric": float(np.mean([f.best_metric for f in ok])) if ok else None,
        "checkpoints": paths,
    }
    dataio.write_json(out_dir / "finetune_summary.json", summary)
    _print_json(summary)
    return 0


def cmd_hpsearch(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    dataset = _load_dataset(cfg)
    space = training.TRAINING_SPACE if cfg.hp_space == "training" else training.FINETUNE_SPACE
    replacements = {}
    if cfg.hp_fixed_widths:
        replacements["fixed_widths"] = tuple(cfg.hp_fixed_widths)
    if cfg.hp_epochs:
        replacements["epochs"] = tuple(cfg.hp_epochs)
    if replacements:
        import dataclasses

        space = dataclasses.replace(space, **replacements)
    n_trials = args.trials if args.trials is not None else cfg.hp_trials
    plan = _fold_plan(cfg, dataset, cfg.task)
    trials = training.random_search(
        dataset, plan, space, n_trials=n_trials, seed=cfg.seed, task=cfg.task
    )
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"task": cfg.task, "n_trials": n_trials, "trials": trials}
    dataio.write_json(out_dir / "search_report.json", payload)
    best = trials[0]
    _print_json(
        {
            "n_trials": n_trials,
            "best_trial": best["trial"],
            "best_metric": best["metric"],
            "best_config": best["config"],
            "report": str(out_dir / "search_report.json"),
        }
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("--seed", type=int, metavar="N", help="root RNG seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument(
        "--task", choices=(SURVIVAL, CLASSIFICATION), help="prediction endpoint"
    )
    common.add_argument("--data", metavar="DIR", help="input data directory")

    parser = argparse.ArgumentParser(
        prog="snnsurv",
        description="Multi-omics survival/classification pipeline around a "
        "self-normalizing feedforward encoder.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="preprocess raw TSVs into a design matrix")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="k-fold training with best-epoch checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score one checkpoint on a dataset")
    p.add_argument("--checkpoint", action="append", required=True, metavar="PATH")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble", parents=[common], help="average predictions over checkpoints")
    p.add_argument("--checkpoint", action="append", required=True, metavar="PATH")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("finetune", parents=[common], help="fine-tune from a base checkpoint")
    p.add_argument("--checkpoint", action="append", required=True, metavar="PATH")
    p.add_argument("--preset", metavar="NAME", help="named fine-tune recipe (paper-ft)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("stratify", parents=[common], help="risk groups, KM curves, pairwise log-rank")
    p.add_argument("--checkpoint", action="append", required=True, metavar="PATH")
    p.set_defaults(func=cmd_stratify)

    p = sub.add_parser("hpsearch", parents=[common], help="random hyperparameter search")
    p.add_argument("--trials", type=int, metavar="N", help="trial count (default: config hp_trials)")
    p.set_defaults(func=cmd_hpsearch)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, OSError, DivergenceError, KeyError) as exc:
        print(
            json.dumps(
                {"error": {"type": type(exc).__name__, "message": str(exc)}},
                sort_keys=True,
            ),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
