"""Cohort ingestion: parsing, validation, labeling, encoding, and splitting.

Everything here is value-oriented: records, splits, and scalers are immutable
once built, and every entry point that produces model-ready features runs the
post-operative leakage guard.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .schema import PLACEHOLDERS, Schema, SchemaError

# MCID: minimal clinically important difference on the SNOT-22 total.
# On integer SNOT-22 data a reduction >= 8.9 is exactly a reduction >= 9.
MCID_REDUCTION = 8.9


class CohortError(ValueError):
    """Hard errors in cohort construction (bad schema usage, bad splits)."""


class LeakageError(CohortError):
    """A post-operative field reached the feature path. Never advisory."""

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = violations
        names = ", ".join(name for name, _ in violations)
        super().__init__(f"post-operative leakage in feature names: {names}")


@dataclass(frozen=True)
class PatientRecord:
    """One pre-operative surgical case.

    ``snot22_6mo`` exists only so the supervision label can be derived; it is
    excluded from every feature path and every serialized prompt.
    """

    patient_id: str
    snot22_baseline: int
    age: int
    sex: str
    ct_total: int
    endoscopy_total: int
    crs_polyps: bool
    previous_surgery: bool
    allergy_testing: bool
    septal_deviation: bool
    depression: bool
    fibromyalgia: bool
    smoker: bool
    copd: bool
    asthma: bool
    osa: bool
    diabetes: bool
    gerd: bool
    asa_intolerance: bool
    insurance: str
    income_bracket: str
    race: str
    snot22_6mo: int | None = None

    def __post_init__(self):
        if not (0 <= self.snot22_baseline <= 110):
            raise CohortError(f"snot22_baseline out of [0,110]: {self.snot22_baseline}")
        if self.snot22_6mo is not None and not (0 <= self.snot22_6mo <= 110):
            raise CohortError(f"snot22_6mo out of [0,110]: {self.snot22_6mo}")
        if self.age < 18:
            raise CohortError(f"age below 18: {self.age}")
        if not (0 <= self.ct_total <= 24):
            raise CohortError(f"ct_total out of [0,24]: {self.ct_total}")
        if not (0 <= self.endoscopy_total <= 20):
            raise CohortError(f"endoscopy_total out of [0,20]: {self.endoscopy_total}")


# Canonical CSV column -> dataclass field.
COLUMN_TO_FIELD = {
    "PATIENT_ID": "patient_id",
    "SNOT22_BLN_TOTAL": "snot22_baseline",
    "SNOT22_6MO_TOTAL": "snot22_6mo",
    "Age": "age",
    "SEX": "sex",
    "BLN_CT_TOTAL": "ct_total",
    "BLN_ENDO_TOTAL": "endoscopy_total",
    "CRS_POLYPS": "crs_polyps",
    "PREVIOUS_SURGERY": "previous_surgery",
    "ALLERGY_TESTING": "allergy_testing",
    "SEPTAL_DEVIATION": "septal_deviation",
    "DEPRESSION": "depression",
    "FIBROMYALGIA": "fibromyalgia",
    "SMOKER": "smoker",
    "COPD": "copd",
    "ASTHMA": "asthma",
    "OSA": "osa",
    "DIABETES": "diabetes",
    "GERD": "gerd",
    "ASA_INTOLERANCE": "asa_intolerance",
    "INSURANCE": "insurance",
    "INCOME": "income_bracket",
    "RACE": "race",
}
FIELD_TO_COLUMN = {v: k for k, v in COLUMN_TO_FIELD.items()}


@dataclass(frozen=True)
class RejectionReport:
    rows_total: int
    accepted: int
    rejections: tuple[tuple[int, str], ...]  # (data-row index, reason)

    @property
    def rejected(self) -> int:
        return len(self.rejections)


def _is_placeholder(value: str) -> bool:
    return value.strip().lower() in PLACEHOLDERS


def _parse_cell(raw: str, spec, schema: Schema):
    """Parse one non-placeholder cell per its column spec. Raises ValueError."""
    value = raw.strip()
    if spec.kind == "int":
        parsed = int(value)
        if spec.min is not None and parsed < spec.min:
            raise ValueError(f"{spec.name}={parsed} below {spec.min}")
        if spec.max is not None and parsed > spec.max:
            raise ValueError(f"{spec.name}={parsed} above {spec.max}")
        return parsed
    if spec.kind == "bool":
        if value == "0":
            return False
        if value == "1":
            return True
        raise ValueError(f"{spec.name}: expected 0/1, got {value!r}")
    if spec.kind == "enum":
        if value not in schema.encodings[spec.name]:
            raise ValueError(f"{spec.name}: unknown category {value!r}")
        return value
    return value  # id


def parse_cohort(csv_bytes: bytes, schema: Schema) -> tuple[list[PatientRecord], RejectionReport]:
    """Parse a canonical cohort CSV into validated records.

    Rows with placeholders or malformed values in required fields are dropped
    and counted; a missing required column is a hard error naming the column.
    """
    text = csv_bytes.decode("utf-8")
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames
    if header is None:
        raise SchemaError("csv has no header row")
    for required in schema.required_columns:
        if required not in header:
            raise SchemaError(f"missing required column: {required}")

    records: list[PatientRecord] = []
    rejections: list[tuple[int, str]] = []
    rows_total = 0
    for idx, row in enumerate(reader):
        rows_total += 1
        kwargs = {}
        reason = None
        for spec in schema.columns:
            raw = row.get(spec.name)
            # a literal enum category ("None" insurance) beats the placeholder rule
            is_category = (
                raw is not None
                and spec.kind == "enum"
                and raw.strip() in schema.encodings[spec.name]
            )
            if not is_category and (raw is None or _is_placeholder(raw)):
                if spec.required:
                    reason = f"missing required field {spec.name}"
                    break
                if spec.name == "PATIENT_ID":
                    kwargs["patient_id"] = f"case_{idx:04d}"
                else:
                    kwargs[COLUMN_TO_FIELD[spec.name]] = None
                continue
            try:
                kwargs[COLUMN_TO_FIELD[spec.name]] = _parse_cell(raw, spec, schema)
            except ValueError as exc:
                reason = str(exc)
                break
        if reason is not None:
            rejections.append((idx, reason))
            continue
        try:
            records.append(PatientRecord(**kwargs))
        except CohortError as exc:
            rejections.append((idx, str(exc)))
    return records, RejectionReport(rows_total, len(records), tuple(rejections))


def serialize_cohort(records: list[PatientRecord], schema: Schema) -> bytes:
    """Render records as canonical CSV; inverse of parse_cohort on valid data."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(schema.column_names)
    for rec in records:
        row = []
        for name in schema.column_names:
            value = getattr(rec, COLUMN_TO_FIELD[name])
            if value is None:
                row.append("")
            elif isinstance(value, bool):
                row.append("1" if value else "0")
            else:
                row.append(str(value))
        writer.writerow(row)
    return buf.getvalue().encode("utf-8")


def derive_label(snot22_baseline: int, snot22_6mo: int) -> int:
    """1 iff the 6-month reduction reaches the MCID (>= 8.9 points)."""
    if not (0 <= snot22_baseline <= 110 and 0 <= snot22_6mo <= 110):
        raise CohortError("SNOT-22 totals must lie in [0,110]")
    return int((snot22_baseline - snot22_6mo) >= MCID_REDUCTION)


def label_records(records: list[PatientRecord]) -> tuple[list[PatientRecord], dict[str, int], list[str]]:
    """Split a cohort into labeled records (with labels) and unlabeled ids."""
    labeled, labels, unlabeled = [], {}, []
    for rec in records:
        if rec.snot22_6mo is None:
            unlabeled.append(rec.patient_id)
        else:
            labeled.append(rec)
            labels[rec.patient_id] = derive_label(rec.snot22_baseline, rec.snot22_6mo)
    return labeled, labels, unlabeled


def leakage_guard(feature_names: list[str], blocklist: tuple[str, ...]) -> None:
    """Halt if any feature name matches a post-operative blocklist pattern.

    Patterns are case-insensitive substrings. Every violating name is listed
    (once, with the first matching pattern).
    """
    violations: list[tuple[str, str]] = []
    for name in feature_names:
        lowered = name.lower()
        for pattern in blocklist:
            if pattern.lower() in lowered:
                violations.append((name, pattern))
                break
    if violations:
        raise LeakageError(violations)


@dataclass(frozen=True)
class Scaler:
    """Per-feature standardization state, fit on training rows only."""

    columns: tuple[str, ...]
    means: tuple[float, ...]
    sds: tuple[float, ...]

    @property
    def state_id(self) -> str:
        payload = json.dumps(
            {"columns": self.columns, "means": self.means, "sds": self.sds},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def transform(self, column: str, value: float) -> float:
        i = self.columns.index(column)
        return (value - self.means[i]) / self.sds[i]


def fit_scaler(train_records: list[PatientRecord], schema: Schema) -> Scaler:
    if not train_records:
        raise CohortError("cannot fit scaler on empty training set")
    means, sds = [], []
    for name in schema.continuous:
        values = np.array(
            [getattr(r, COLUMN_TO_FIELD[name]) for r in train_records], dtype=float
        )
        mean = float(values.mean())
        sd = float(values.std())
        means.append(mean)
        sds.append(sd if sd > 0 else 1.0)  # constant column: pass through centered
    return Scaler(tuple(schema.continuous), tuple(means), tuple(sds))


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]
    feature_names: tuple[str, ...]
    scaling_state_id: str

    def __post_init__(self):
        if len(self.values) != len(self.feature_names):
            raise CohortError("feature values/names length mismatch")


def encode(record: PatientRecord, schema: Schema, scaler: Scaler) -> FeatureVector:
    """Deterministically encode one record in schema feature order.

    Booleans map to {0,1}, enums to their fixed codes, continuous fields are
    standardized by the fitted scaler. Unknown enum values are hard errors.
    """
    leakage_guard(list(schema.feature_order), schema.blocklist)
    values = []
    for name in schema.feature_order:
        raw = getattr(record, COLUMN_TO_FIELD[name])
        spec = schema.column(name)
        if spec.kind == "enum":
            try:
                values.append(float(schema.encodings[name][raw]))
            except KeyError:
                raise CohortError(f"{name}: value {raw!r} not in encoding dictionary") from None
        elif spec.kind == "bool":
            values.append(1.0 if raw else 0.0)
        elif name in schema.continuous:
            values.append(scaler.transform(name, float(raw)))
        else:
            values.append(float(raw))
    return FeatureVector(tuple(values), tuple(schema.feature_order), scaler.state_id)


def encode_matrix(records: list[PatientRecord], schema: Schema, scaler: Scaler) -> np.ndarray:
    """Encode a record list into an (n, d) float matrix in schema order."""
    return np.array([encode(r, schema, scaler).values for r in records], dtype=float)


@dataclass(frozen=True)
class CohortSplit:
    train_ids: frozenset[str]
    test_ids: frozenset[str]
    seed: int
    label_prevalence_train: float
    label_prevalence_test: float


def stratified_split(
    records: list[PatientRecord], test_fraction: float = 0.2, seed: int = 0
) -> CohortSplit:
    """Deterministic stratified split preserving class prevalence.

    Per-class test quotas use largest-remainder rounding so the total test
    size is round(n * test_fraction) and per-class counts are within one case
    of perfect proportionality.
    """
    if not (0.0 < test_fraction < 1.0):
        raise CohortError(f"test_fraction must lie in (0,1), got {test_fraction}")
    labeled, labels, unlabeled = label_records(records)
    if unlabeled:
        raise CohortError(f"{len(unlabeled)} records lack a 6-month outcome; cannot split")
    by_class: dict[int, list[str]] = {0: [], 1: []}
    for rec in labeled:
        by_class[labels[rec.patient_id]].append(rec.patient_id)
    for cls, ids in by_class.items():
        if len(ids) < 2:
            raise CohortError(f"class {cls} has {len(ids)} members; cannot stratify")

    n = len(labeled)
    n_test = int(round(n * test_fraction))
    quotas = {cls: len(ids) * test_fraction for cls, ids in by_class.items()}
    base = {cls: math.floor(q) for cls, q in quotas.items()}
    leftover = n_test - sum(base.values())
    order = sorted(by_class, key=lambda c: quotas[c] - base[c], reverse=True)
    for cls in order[:leftover]:
        base[cls] += 1

    rng = np.random.default_rng(seed)
    test_ids: set[str] = set()
    train_ids: set[str] = set()
    for cls, ids in sorted(by_class.items()):
        ids_sorted = sorted(ids)
        perm = rng.permutation(len(ids_sorted))
        picked = [ids_sorted[i] for i in perm[: base[cls]]]
        test_ids.update(picked)
        train_ids.update(set(ids_sorted) - set(picked))

    def prevalence(id_set):
        return sum(labels[i] for i in id_set) / len(id_set)

    return CohortSplit(
        train_ids=frozenset(train_ids),
        test_ids=frozenset(test_ids),
        seed=seed,
        label_prevalence_train=prevalence(train_ids),
        label_prevalence_test=prevalence(test_ids),
    )
