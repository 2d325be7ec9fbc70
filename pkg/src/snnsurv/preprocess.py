"""Feature-reduction pipeline and cross-cancer / cross-modality integration.

Per cancer and per modality, the reduction ledger runs in a fixed order:
all-missing drop -> quasi-constant drop -> duplicate drop -> variance filter
-> expression floor (gene expression only) -> within-group mean imputation.
Reduced tables are then unioned per modality across cancers (absent features
zero-padded) and the modality blocks concatenated into one design matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import SurvivalLabels

GENE_EXPRESSION = "gene_expression"
DNA_METHYLATION = "dna_methylation"
MIRNA_EXPRESSION = "mirna_expression"
PROTEIN_EXPRESSION = "protein_expression"
DNA_MUTATION = "dna_mutation"
CLINICAL = "clinical"

MODALITIES = (
    GENE_EXPRESSION,
    DNA_METHYLATION,
    MIRNA_EXPRESSION,
    PROTEIN_EXPRESSION,
    DNA_MUTATION,
    CLINICAL,
)

# categorical dictionaries for clinical encoding; unknown/NA -> -1
NA_CODE = -1
GENDER_CODES = {"male": 0, "female": 1}
RACE_CODES = {
    "white": 0,
    "asian": 1,
    "black": 2,
    "american indian": 3,
    "alaska": 4,
    "islander": 5,
}
STAGE_CODES = {
    s: i
    for i, s in enumerate(
        ["0", "i", "ia", "ib", "ic", "ii", "iia", "iib", "iic",
         "iii", "iiia", "iiib", "iiic", "iv", "iva", "ivb", "ivc"]
    )
}
_NA_TOKENS = {"na", "n/a", "", "unknown", "not reported"}


@dataclass
class RawModalityTable:
    """One modality's samples-by-features matrix; missing values are NaN."""

    modality: str
    sample_ids: list[str]
    feature_names: list[str]
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ValueError(f"duplicate sample ids in {self.modality} table")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError(f"duplicate feature names in {self.modality} table")
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (len(self.sample_ids), len(self.feature_names))
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != {expected}")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def select_features(self, keep: np.ndarray) -> "RawModalityTable":
        keep = np.asarray(keep)
        return RawModalityTable(
            modality=self.modality,
            sample_ids=list(self.sample_ids),
            feature_names=[self.feature_names[i] for i in np.flatnonzero(keep)]
            if keep.dtype == bool
            else [self.feature_names[i] for i in keep],
            values=self.values[:, keep],
        )


@dataclass(frozen=True)
class PreprocessConfig:
    quasi_constant_tol: float = 0.998
    variance_threshold: float = 0.25
    variance_threshold_by_modality: dict = field(default_factory=dict)
    expression_floor: float = 7.0

    def __post_init__(self) -> None:
        if not 0.0 < self.quasi_constant_tol <= 1.0:
            raise ValueError(f"quasi_constant_tol must be in (0, 1], got {self.quasi_constant_tol}")
        if self.variance_threshold < 0:
            raise ValueError("variance_threshold must be non-negative")

    def threshold_for(self, modality: str) -> float:
        return float(self.variance_threshold_by_modality.get(modality, self.variance_threshold))


# ---------------------------------------------------------------------------
# reduction stages (each pure: table in, table out, survivors keep order)
# ---------------------------------------------------------------------------


def drop_all_nan_features(t: RawModalityTable) -> RawModalityTable:
    """Remove features missing in every sample."""
    keep = ~np.isnan(t.values).all(axis=0)
    return t.select_features(keep)


def drop_quasi_constant(t: RawModalityTable, tol: float) -> RawModalityTable:
    """Drop a feature when its modal value covers >= tol of the non-missing
    entries; tol=1.0 drops only exactly-constant columns."""
    if not 0.0 < tol <= 1.0:
        raise ValueError(f"tol must be in (0, 1], got {tol}")
    keep = np.ones(t.n_features, dtype=bool)
    for j in range(t.n_features):
        col = t.values[:, j]
        observed = col[~np.isnan(col)]
        if observed.size == 0:
            keep[j] = False
            continue
        _, counts = np.unique(observed, return_counts=True)
        keep[j] = counts.max() / observed.size < tol
    return t.select_features(keep)


def drop_duplicate_features(t: RawModalityTable) -> RawModalityTable:
    """Among columns with identical value vectors (NaN == NaN), keep the
    first in column order."""
    seen: set[bytes] = set()
    keep = np.ones(t.n_features, dtype=bool)
    for j in range(t.n_features):
        col = t.values[:, j]
        # +0.0 canonicalizes -0.0; NaNs are re-stamped so payload bits never differ
        canonical = np.where(np.isnan(col), np.nan, col + 0.0)
        key = canonical.tobytes()
        if key in seen:
            keep[j] = False
        else:
            seen.add(key)
    return t.select_features(keep)


def variance_filter(t: RawModalityTable, threshold: float) -> RawModalityTable:
    """Drop features whose population variance over non-missing entries is
    <= threshold."""
    if threshold < 0:
        raise ValueError(f"threshold must be non-negative, got {threshold}")
    with np.errstate(invalid="ignore"):
        var = np.nanvar(t.values, axis=0)
    return t.select_features(var > threshold)


def expression_floor_filter(t: RawModalityTable, floor: float) -> RawModalityTable:
    """Keep a gene only when it peaks strictly above the floor in some sample."""
    if t.modality != GENE_EXPRESSION:
        raise ValueError(f"expression floor applies to gene expression only, got {t.modality}")
    with np.errstate(invalid="ignore"):
        peak = np.nanmax(t.values, axis=0) if t.n_features else np.empty(0)
    return t.select_features(peak > floor)


def impute_mean_within_group(t: RawModalityTable) -> RawModalityTable:
    """Replace missing entries with the feature mean over the table's own
    samples (the table is one cancer type, so the group is the cancer)."""
    values = t.values.copy()
    missing = np.isnan(values)
    if missing.any():
        n_obs = (~missing).sum(axis=0)
        dead = np.flatnonzero(n_obs == 0)
        if dead.size:
            raise ValueError(
                "all-missing features survived to imputation (pipeline-order error): "
                + ", ".join(t.feature_names[j] for j in dead[:5])
            )
        with np.errstate(invalid="ignore"):
            means = np.nanmean(values, axis=0)
        values[missing] = np.broadcast_to(means, values.shape)[missing]
    return RawModalityTable(
        modality=t.modality,
        sample_ids=list(t.sample_ids),
        feature_names=list(t.feature_names),
        values=values,
    )


def reduce_modality(
    t: RawModalityTable, config: PreprocessConfig
) -> tuple[RawModalityTable, list[dict]]:
    """Run the full reduction ledger on one cancer/modality table.

    Returns the reduced, fully imputed table and the drop ledger (one
    {feature, reason} entry per removed column).
    """
    ledger: list[dict] = []

    def diff(before: RawModalityTable, after: RawModalityTable, reason: str) -> None:
        survivors = set(after.feature_names)
        ledger.extend(
            {"feature": name, "reason": reason}
            for name in before.feature_names
            if name not in survivors
        )

    stages = [
        ("all_missing", drop_all_nan_features),
        ("quasi_constant", lambda x: drop_quasi_constant(x, config.quasi_constant_tol)),
        ("duplicate", drop_duplicate_features),
        ("low_variance", lambda x: variance_filter(x, config.threshold_for(t.modality))),
    ]
    if t.modality == GENE_EXPRESSION:
        stages.append(
            ("below_expression_floor", lambda x: expression_floor_filter(x, config.expression_floor))
        )
    for reason, stage in stages:
        reduced = stage(t)
        diff(t, reduced, reason)
        t = reduced
    return impute_mean_within_group(t), ledger


# ---------------------------------------------------------------------------
# clinical encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClinicalRecord:
    sample_id: str
    age: float
    gender: str
    race: str
    stage: str
    cancer_type: str


def _encode_category(value: str, codes: dict[str, int], column: str) -> float:
    token = " ".join(str(value).split()).lower()
    if token in _NA_TOKENS:
        return float(NA_CODE)
    if token not in codes:
        raise ValueError(f"unknown {column} category {value!r}")
    return float(codes[token])


def encode_clinical(records: list[ClinicalRecord], include_stage: bool) -> RawModalityTable:
    """Numeric clinical block: [age, gender_code, race_code, (stage_code)].

    Codes are plain integers from the category dictionaries; NA maps to -1.
    Stage is dropped for the classification task (stage distributions leak
    the cancer type).
    """
    if not records:
        raise ValueError("no clinical records")
    names = ["age", "gender_code", "race_code"] + (["stage_code"] if include_stage else [])
    rows = []
    for r in records:
        age = float(r.age) if r.age is not None else np.nan
        if not np.isnan(age) and age < 0:
            raise ValueError(f"negative age {age} for sample {r.sample_id}")
        row = [
            age,
            _encode_category(r.gender, GENDER_CODES, "gender"),
            _encode_category(r.race, RACE_CODES, "race"),
        ]
        if include_stage:
            row.append(_encode_category(r.stage, STAGE_CODES, "stage"))
        rows.append(row)
    return RawModalityTable(
        modality=CLINICAL,
        sample_ids=[r.sample_id for r in records],
        feature_names=names,
        values=np.asarray(rows, dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# integration: per-modality union, cross-modality concatenation
# ---------------------------------------------------------------------------


@dataclass
class ModalityBlock:
    """One modality's unioned feature space aligned over a set of samples."""

    modality: str
    feature_names: list[str]
    sample_ids: list[str]
    values: np.ndarray


@dataclass
class FeatureSpace:
    """Feature-name bookkeeping for the concatenated design matrix."""

    modalities: list[str]
    names: dict[str, list[str]]
    offsets: dict[str, int]
    per_cancer: dict[str, dict[str, list[str]]] = field(default_factory=dict)

    @property
    def total_width(self) -> int:
        return sum(len(v) for v in self.names.values())

    def width(self, modality: str) -> int:
        return len(self.names[modality])

    def slice_for(self, modality: str) -> slice:
        start = self.offsets[modality]
        return slice(start, start + self.width(modality))


def union_modality(tables: list[RawModalityTable]) -> ModalityBlock:
    """Union one modality's per-cancer tables into a single aligned matrix.

    Feature order is first-seen across the tables in the order given (the
    caller passes cancers sorted by label, so manifests are reproducible).
    A sample's entries for features its own cancer lacks are exactly 0.0.
    """
    if not tables:
        raise ValueError("union_modality requires at least one table")
    modality = tables[0].modality
    if any(t.modality != modality for t in tables):
        raise ValueError("union_modality tables must share a modality")
    union_names: list[str] = []
    col_of: dict[str, int] = {}
    for t in tables:
        if np.isnan(t.values).any():
            raise ValueError(f"{modality}: missing values reached union (impute first)")
        for name in t.feature_names:
            if name not in col_of:
                col_of[name] = len(union_names)
                union_names.append(name)
    sample_ids: list[str] = []
    seen_samples: set[str] = set()
    for t in tables:
        for sid in t.sample_ids:
            if sid in seen_samples:
                raise ValueError(f"duplicate sample id across cancers: {sid!r}")
            seen_samples.add(sid)
        sample_ids.extend(t.sample_ids)
    values = np.zeros((len(sample_ids), len(union_names)))
    row = 0
    for t in tables:
        cols = [col_of[name] for name in t.feature_names]
        values[row : row + len(t.sample_ids), cols] = t.values
        row += len(t.sample_ids)
    return ModalityBlock(
        modality=modality, feature_names=union_names, sample_ids=sample_ids, values=values
    )


def align_block(block: ModalityBlock, sample_ids: list[str]) -> ModalityBlock:
    """Reindex a block onto the cohort's sample list; samples absent from the
    block (missing the whole modality) get zero-filled rows."""
    index = {sid: i for i, sid in enumerate(block.sample_ids)}
    unknown = [sid for sid in block.sample_ids if sid not in set(sample_ids)]
    if unknown:
        raise ValueError(
            f"{block.modality}: samples not present in labels: {unknown[:5]}"
        )
    values = np.zeros((len(sample_ids), len(block.feature_names)))
    for row, sid in enumerate(sample_ids):
        src = index.get(sid)
        if src is not None:
            values[row] = block.values[src]
    return ModalityBlock(
        modality=block.modality,
        feature_names=list(block.feature_names),
        sample_ids=list(sample_ids),
        values=values,
    )


@dataclass
class CohortDataset:
    """Design matrix plus per-sample survival and class labels."""

    X: np.ndarray
    sample_ids: list[str]
    survival: SurvivalLabels
    class_labels: np.ndarray
    class_names: list[str]
    feature_space: FeatureSpace

    def __post_init__(self) -> None:
        n = len(self.sample_ids)
        if self.X.shape[0] != n or len(self.survival) != n or len(self.class_labels) != n:
            raise ValueError("sample count mismatch between matrix and labels")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "CohortDataset":
        return CohortDataset(
            X=self.X[idx],
            sample_ids=[self.sample_ids[i] for i in np.atleast_1d(idx)],
            survival=self.survival.subset(idx),
            class_labels=self.class_labels[idx],
            class_names=list(self.class_names),
            feature_space=self.feature_space,
        )


def concat_modalities(
    blocks: list[ModalityBlock],
    survival: SurvivalLabels,
    class_labels: np.ndarray,
    class_names: list[str],
    per_cancer: dict[str, dict[str, list[str]]] | None = None,
) -> CohortDataset:
    """Concatenate aligned modality blocks column-wise into one row vector
    per sample, recording each modality's offset."""
    if not blocks:
        raise ValueError("concat_modalities requires at least one block")
    sample_ids = blocks[0].sample_ids
    for b in blocks[1:]:
        if b.sample_ids != sample_ids:
            raise ValueError(
                f"sample-order mismatch between {blocks[0].modality} and {b.modality} blocks"
            )
    offsets: dict[str, int] = {}
    names: dict[str, list[str]] = {}
    cursor = 0
    for b in blocks:
        offsets[b.modality] = cursor
        names[b.modality] = list(b.feature_names)
        cursor += len(b.feature_names)
    X = np.concatenate([b.values for b in blocks], axis=1) if len(blocks) > 1 else blocks[0].values.copy()
    space = FeatureSpace(
        modalities=[b.modality for b in blocks],
        names=names,
        offsets=offsets,
        per_cancer=per_cancer or {},
    )
    return CohortDataset(
        X=X,
        sample_ids=list(sample_ids),
        survival=survival,
        class_labels=np.asarray(class_labels, dtype=np.int64),
        class_names=list(class_names),
        feature_space=space,
    )
