"""Report emission: versioned JSON summaries, Kaplan-Meier and confusion
CSVs, and matplotlib renderings of both written next to the delimited files.

CSV/JSON are the canonical outputs (any external plotter can consume them);
the PNGs are a convenience layer.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataio import atomic_write_bytes, atomic_write_text, write_json
from .metrics import RISK_GROUP_NAMES, ClassificationReport, KMCurve

KM_CSV_HEADER = "time,survival,ci_low,ci_high,at_risk,group"

_GROUP_COLORS = {"low": "tab:green", "intermediate": "tab:blue", "high": "tab:orange"}


def km_csv_rows(curves: list[tuple[str, KMCurve]]) -> list[str]:
    rows = [KM_CSV_HEADER]
    for group, curve in curves:
        # the step function starts at S(0) = 1 with everyone at risk
        rows.append(f"0.0,1.0,1.0,1.0,{curve.n_samples},{group}")
        for k in range(len(curve.times)):
            rows.append(
                f"{curve.times[k]!r},{curve.survival[k]!r},{curve.ci_low[k]!r},"
                f"{curve.ci_high[k]!r},{curve.at_risk[k]},{group}"
            )
    return rows


def write_km_csv(path: Path, curves: list[tuple[str, KMCurve]]) -> None:
    atomic_write_text(path, "\n".join(km_csv_rows(curves)) + "\n")


def write_confusion_csv(
    path: Path, report: ClassificationReport, class_names: list[str]
) -> None:
    lines = ["truth\\pred," + ",".join(class_names)]
    for i, name in enumerate(class_names):
        lines.append(name + "," + ",".join(str(int(v)) for v in report.confusion[i]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def classification_payload(report: ClassificationReport, class_names: list[str]) -> dict:
    return {
        "accuracy": report.accuracy,
        "classes": [
            {
                "name": class_names[c],
                "precision": float(report.precision[c]),
                "recall": float(report.recall[c]),
                "f1": float(report.f1[c]),
                "support": int(report.support[c]),
                "empty": c in report.empty_classes,
            }
            for c in range(report.n_classes)
        ],
    }


def _savefig_atomic(fig, path: Path) -> None:
    import io

    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=150, bbox_inches="tight")
    atomic_write_bytes(path, buf.getvalue())


def km_figure(path: Path, curves: list[tuple[str, KMCurve]], title: str = "Kaplan-Meier") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 5))
    for group, curve in curves:
        t = np.concatenate([[0.0], curve.times])
        s = np.concatenate([[1.0], curve.survival])
        lo = np.concatenate([[1.0], curve.ci_low])
        hi = np.concatenate([[1.0], curve.ci_high])
        color = _GROUP_COLORS.get(group)
        ax.step(t, s, where="post", label=group, color=color)
        ax.fill_between(t, lo, hi, step="post", alpha=0.25, color=color, linewidth=0)
    ax.set_xlabel("time")
    ax.set_ylabel("survival probability")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    ax.set_title(title)
    _savefig_atomic(fig, path)
    plt.close(fig)


def confusion_figure(path: Path, report: ClassificationReport, class_names: list[str]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 7))
    im = ax.imshow(report.confusion, cmap="Blues")
    fig.colorbar(im, ax=ax, shrink=0.8)
    ticks = np.arange(len(class_names))
    small = len(class_names) <= 40
    ax.set_xticks(ticks)
    ax.set_yticks(ticks)
    if small:
        ax.set_xticklabels(class_names, rotation=90, fontsize=6)
        ax.set_yticklabels(class_names, fontsize=6)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"confusion matrix (accuracy {report.accuracy:.4f})")
    _savefig_atomic(fig, path)
    plt.close(fig)


def emit_survival_report(
    out_dir: Path,
    payload: dict,
    km_curves: list[tuple[str, KMCurve]] | None = None,
    figures: bool = True,
    stem: str = "report",
) -> dict[str, str]:
    """Write report.json (+ KM CSV and PNG when curves are given); returns
    the emitted file map."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    write_json(out_dir / f"{stem}.json", payload)
    files["report"] = str(out_dir / f"{stem}.json")
    if km_curves:
        write_km_csv(out_dir / "km_curves.csv", km_curves)
        files["km_csv"] = str(out_dir / "km_curves.csv")
        if figures:
            km_figure(out_dir / "km_curves.png", km_curves)
            files["km_png"] = str(out_dir / "km_curves.png")
    return files


def emit_classification_report(
    out_dir: Path,
    payload: dict,
    report: ClassificationReport,
    class_names: list[str],
    figures: bool = True,
    stem: str = "report",
) -> dict[str, str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    write_json(out_dir / f"{stem}.json", payload)
    files["report"] = str(out_dir / f"{stem}.json")
    write_confusion_csv(out_dir / "confusion_matrix.csv", report, class_names)
    files["confusion_csv"] = str(out_dir / "confusion_matrix.csv")
    if figures:
        confusion_figure(out_dir / "confusion_matrix.png", report, class_names)
        files["confusion_png"] = str(out_dir / "confusion_matrix.png")
    return files
