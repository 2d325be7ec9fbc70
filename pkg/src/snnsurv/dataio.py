"""On-disk formats and the ingest pipeline.

Input layout: one directory per cancer cohort, each holding `labels.tsv`
(sample_id, os_days, event, cancer_type, age, gender, race, stage) plus one
`<modality>.tsv` per molecular modality (header `sample_id` + feature names,
missing values spelled `NA`). Clinical features are derived from labels.tsv,
not from a separate file.

Output: a binary design matrix plus a JSON manifest sidecar.

    design.snmd:  magic b"SNMD", then version / rows / cols as u64 LE,
                  then float32 LE values, row-major.
    manifest.json: modality feature lists and offsets, per-sample labels,
                  class names, the per-cancer drop ledger, config echo.

All writes go through temp-file + rename, so a failed run never leaves a
partial matrix behind.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import preprocess as pp
from .losses import SurvivalLabels
from .preprocess import (
    CLINICAL,
    MODALITIES,
    ClinicalRecord,
    CohortDataset,
    FeatureSpace,
    ModalityBlock,
    PreprocessConfig,
    RawModalityTable,
)

MATRIX_MAGIC = b"SNMD"
MATRIX_VERSION = 1
MATRIX_FILENAME = "design.snmd"
MANIFEST_FILENAME = "manifest.json"
SCHEMA_VERSION = 1

LABEL_COLUMNS = (
    "sample_id", "os_days", "event", "cancer_type", "age", "gender", "race", "stage",
)

MOLECULAR_MODALITIES = tuple(m for m in MODALITIES if m != CLINICAL)


class DataFormatError(ValueError):
    """Malformed input file; the message carries file and line."""


def atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: Path, payload: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# TSV reading
# ---------------------------------------------------------------------------


def _read_tsv_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}:{lineno}: row has {len(row)} fields, header has {len(header)}"
                )
            rows.append(row)
    return header, rows


def _parse_value(token: str, path: Path, lineno: int, column: str) -> float:
    if token == "NA":
        return np.nan
    try:
        return float(token)
    except ValueError:
        raise DataFormatError(
            f"{path}:{lineno}: non-numeric value {token!r} in column {column!r}"
        ) from None


def read_modality_tsv(path: Path, modality: str) -> RawModalityTable:
    header, rows = _read_tsv_rows(path)
    if not header or header[0] != "sample_id":
        raise DataFormatError(f"{path}: first header column must be 'sample_id'")
    feature_names = header[1:]
    sample_ids = [r[0] for r in rows]
    values = np.empty((len(rows), len(feature_names)))
    for i, row in enumerate(rows):
        for j, token in enumerate(row[1:]):
            values[i, j] = _parse_value(token, path, i + 2, feature_names[j])
    try:
        return RawModalityTable(
            modality=modality, sample_ids=sample_ids,
            feature_names=feature_names, values=values,
        )
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


@dataclass
class CohortLabels:
    sample_ids: list[str]
    os_days: np.ndarray
    event: np.ndarray
    cancer_type: list[str]
    clinical: list[ClinicalRecord]


def read_labels_tsv(path: Path) -> CohortLabels:
    header, rows = _read_tsv_rows(path)
    if set(header) != set(LABEL_COLUMNS):
        raise DataFormatError(
            f"{path}: label columns must be exactly {list(LABEL_COLUMNS)}, got {header}"
        )
    col = {name: header.index(name) for name in LABEL_COLUMNS}
    ids, days, events, cancers, clinical = [], [], [], [], []
    for i, row in enumerate(rows):
        lineno = i + 2
        sid = row[col["sample_id"]]
        ids.append(sid)
        days.append(_parse_value(row[col["os_days"]], path, lineno, "os_days"))
        ev = _parse_value(row[col["event"]], path, lineno, "event")
        if ev not in (0.0, 1.0):
            raise DataFormatError(f"{path}:{lineno}: event must be 0 or 1, got {ev:g}")
        events.append(ev)
        cancers.append(row[col["cancer_type"]])
        clinical.append(
            ClinicalRecord(
                sample_id=sid,
                age=_parse_value(row[col["age"]], path, lineno, "age"),
                gender=row[col["gender"]],
                race=row[col["race"]],
                stage=row[col["stage"]],
                cancer_type=row[col["cancer_type"]],
            )
        )
    if len(set(ids)) != len(ids):
        raise DataFormatError(f"{path}: duplicate sample ids")
    return CohortLabels(
        sample_ids=ids,
        os_days=np.asarray(days),
        event=np.asarray(events),
        cancer_type=cancers,
        clinical=clinical,
    )


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------


def ingest(
    data_dir: str | Path,
    config: PreprocessConfig | None = None,
    include_stage: bool = True,
    include_clinical: bool = True,
) -> tuple[CohortDataset, dict]:
    """Run the full preprocessing pipeline over a data directory.

    Returns the cohort dataset and its manifest. Raises DataFormatError on
    malformed files, unknown modality filenames, duplicate sample ids, or
    samples that appear in a modality file but not in labels.tsv.
    """
    config = config or PreprocessConfig()
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataFormatError(f"{data_dir}: not a directory")
    cancer_dirs = sorted(p for p in data_dir.iterdir() if p.is_dir() and (p / "labels.tsv").exists())
    if not cancer_dirs:
        raise DataFormatError(f"{data_dir}: no modalities found (no '<cancer>/labels.tsv')")

    labels_by_cancer: dict[str, CohortLabels] = {}
    reduced: dict[str, list[RawModalityTable]] = {m: [] for m in MODALITIES}
    drop_ledger: dict[str, dict[str, list[dict]]] = {}
    per_cancer_names: dict[str, dict[str, list[str]]] = {}
    all_sample_ids: list[str] = []
    seen_ids: set[str] = set()

    for cancer_dir in cancer_dirs:
        cancer = cancer_dir.name
        labels = read_labels_tsv(cancer_dir / "labels.tsv")
        for sid in labels.sample_ids:
            if sid in seen_ids:
                raise DataFormatError(f"duplicate sample id across cancers: {sid!r}")
            seen_ids.add(sid)
        all_sample_ids.extend(labels.sample_ids)
        labels_by_cancer[cancer] = labels
        drop_ledger[cancer] = {}
        per_cancer_names[cancer] = {}

        for tsv in sorted(cancer_dir.glob("*.tsv")):
            if tsv.name == "labels.tsv":
                continue
            modality = tsv.stem
            if modality == CLINICAL:
                raise DataFormatError(
                    f"{tsv}: clinical features are derived from labels.tsv, "
                    "not a standalone modality file"
                )
            if modality not in MOLECULAR_MODALITIES:
                raise DataFormatError(
                    f"{tsv}: unknown modality {modality!r}; expected one of "
                    f"{list(MOLECULAR_MODALITIES)}"
                )
            table = read_modality_tsv(tsv, modality)
            extraneous = [s for s in table.sample_ids if s not in set(labels.sample_ids)]
            if extraneous:
                raise DataFormatError(
                    f"{tsv}: samples missing from labels.tsv: {extraneous[:5]}"
                )
            table, ledger = pp.reduce_modality(table, config)
            reduced[modality].append(table)
            drop_ledger[cancer][modality] = ledger
            per_cancer_names[cancer][modality] = list(table.feature_names)

        if include_clinical:
            clin = pp.encode_clinical(labels.clinical, include_stage=include_stage)
            clin = pp.impute_mean_within_group(clin)
            reduced[CLINICAL].append(clin)
            per_cancer_names[cancer][CLINICAL] = list(clin.feature_names)

    blocks: list[ModalityBlock] = []
    for modality in MODALITIES:
        tables = reduced[modality]
        if tables:
            block = pp.union_modality(tables)
            blocks.append(pp.align_block(block, all_sample_ids))
    if not blocks:
        raise DataFormatError(f"{data_dir}: no modalities found in any cancer directory")

    os_days = np.concatenate([labels_by_cancer[d.name].os_days for d in cancer_dirs])
    event = np.concatenate([labels_by_cancer[d.name].event for d in cancer_dirs])
    cancer_types = [
        c for d in cancer_dirs for c in labels_by_cancer[d.name].cancer_type
    ]
    class_names = sorted(set(cancer_types))
    class_index = {name: i for i, name in enumerate(class_names)}
    class_labels = np.asarray([class_index[c] for c in cancer_types], dtype=np.int64)

    dataset = pp.concat_modalities(
        blocks,
        survival=SurvivalLabels(os_days, event),
        class_labels=class_labels,
        class_names=class_names,
        per_cancer=per_cancer_names,
    )

    manifest = {
        "modalities": [
            {
                "name": b.modality,
                "offset": dataset.feature_space.offsets[b.modality],
                "width": len(b.feature_names),
                "features": list(b.feature_names),
            }
            for b in blocks
        ],
        "samples": [
            {
                "id": sid,
                "os_days": float(os_days[i]),
                "event": int(event[i]),
                "cancer_type": cancer_types[i],
            }
            for i, sid in enumerate(dataset.sample_ids)
        ],
        "class_names": class_names,
        "per_cancer_features": per_cancer_names,
        "drop_ledger": drop_ledger,
        "preprocess": {
            "quasi_constant_tol": config.quasi_constant_tol,
            "variance_threshold": config.variance_threshold,
            "variance_threshold_by_modality": dict(config.variance_threshold_by_modality),
            "expression_floor": config.expression_floor,
            "include_stage": include_stage,
            "include_clinical": include_clinical,
        },
    }
    return dataset, manifest


# ---------------------------------------------------------------------------
# design-matrix round trip
# ---------------------------------------------------------------------------


def matrix_bytes(X: np.ndarray) -> bytes:
    header = MATRIX_MAGIC + struct.pack("<QQQ", MATRIX_VERSION, X.shape[0], X.shape[1])
    return header + np.ascontiguousarray(X, dtype="<f4").tobytes()


def read_matrix(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    if blob[:4] != MATRIX_MAGIC:
        raise DataFormatError(f"{path}: bad magic {blob[:4]!r}, expected {MATRIX_MAGIC!r}")
    version, rows, cols = struct.unpack_from("<QQQ", blob, 4)
    if version != MATRIX_VERSION:
        raise DataFormatError(f"{path}: unsupported matrix version {version}")
    expected = 28 + 4 * rows * cols
    if len(blob) != expected:
        raise DataFormatError(f"{path}: size {len(blob)} != expected {expected}")
    data = np.frombuffer(blob, dtype="<f4", offset=28)
    return data.reshape(rows, cols).astype(np.float64)


def write_dataset(dataset: CohortDataset, manifest: dict, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(out_dir / MATRIX_FILENAME, matrix_bytes(dataset.X))
    write_json(out_dir / MANIFEST_FILENAME, manifest)
    return out_dir


def load_dataset(path: str | Path) -> tuple[CohortDataset, dict]:
    """Reload a written dataset directory (values come back as float64
    widened from the stored float32)."""
    path = Path(path)
    manifest = json.loads((path / MANIFEST_FILENAME).read_text())
    X = read_matrix(path / MATRIX_FILENAME)
    samples = manifest["samples"]
    if X.shape[0] != len(samples):
        raise DataFormatError(
            f"{path}: matrix has {X.shape[0]} rows but manifest lists {len(samples)} samples"
        )
    class_names = list(manifest["class_names"])
    class_index = {name: i for i, name in enumerate(class_names)}
    space = FeatureSpace(
        modalities=[m["name"] for m in manifest["modalities"]],
        names={m["name"]: list(m["features"]) for m in manifest["modalities"]},
        offsets={m["name"]: int(m["offset"]) for m in manifest["modalities"]},
        per_cancer=manifest.get("per_cancer_features", {}),
    )
    if space.total_width != X.shape[1]:
        raise DataFormatError(
            f"{path}: manifest width {space.total_width} != matrix cols {X.shape[1]}"
        )
    dataset = CohortDataset(
        X=X,
        sample_ids=[s["id"] for s in samples],
        survival=SurvivalLabels(
            np.asarray([s["os_days"] for s in samples], dtype=np.float64),
            np.asarray([s["event"] for s in samples], dtype=np.float64),
        ),
        class_labels=np.asarray([class_index[s["cancer_type"]] for s in samples], dtype=np.int64),
        class_names=class_names,
        feature_space=space,
    )
    return dataset, manifest


def read_oracle_risk(data_dir: str | Path, sample_ids: list[str]) -> np.ndarray:
    """Read the generator's true risk scores (oracle.tsv), aligned to the
    given sample order."""
    path = Path(data_dir) / "oracle.tsv"
    header, rows = _read_tsv_rows(path)
    if header != ["sample_id", "risk"]:
        raise DataFormatError(f"{path}: expected header sample_id/risk, got {header}")
    risk = {r[0]: float(r[1]) for r in rows}
    missing = [s for s in sample_ids if s not in risk]
    if missing:
        raise DataFormatError(f"{path}: missing risk for samples {missing[:5]}")
    return np.asarray([risk[s] for s in sample_ids])
