"""Loading, validation and per-target splitting of the telemonitoring records."""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from psgt._random import generator

logger = logging.getLogger(__name__)

__all__ = [
    "VOICE_COLUMNS",
    "CSV_COLUMNS",
    "FEATURE_NAMES",
    "SchemaError",
    "DataParseError",
    "DataValidationError",
    "DegenerateSubjectError",
    "Record",
    "SubjectSeries",
    "Dataset",
    "TargetSplit",
    "load_dataset",
    "make_target_split",
    "feature_matrix",
    "dataset_to_json",
    "dataset_from_json",
    "write_csv",
    "make_synthetic_dataset",
]

VOICE_COLUMNS = (
    "Jitter(%)", "Jitter(Abs)", "Jitter:RAP", "Jitter:PPQ5", "Jitter:DDP",
    "Shimmer", "Shimmer(dB)", "Shimmer:APQ3", "Shimmer:APQ5", "Shimmer:APQ11",
    "Shimmer:DDA", "NHR", "HNR", "RPDE", "DFA", "PPE",
)
CSV_COLUMNS = ("subject#", "age", "sex", "test_time", "motor_UPDRS",
               "total_UPDRS") + VOICE_COLUMNS
FEATURE_NAMES = VOICE_COLUMNS + ("age", "sex")

UPDRS_RANGE = {"motor": (0.0, 108.0), "total": (0.0, 176.0)}
TARGET_KINDS = tuple(UPDRS_RANGE)


class SchemaError(ValueError):
    """The CSV header does not match the telemonitoring columns."""


class DataParseError(ValueError):
    """A cell could not be parsed as a finite number."""


class DataValidationError(ValueError):
    """A parsed value is outside its allowed range."""


class DegenerateSubjectError(ValueError):
    """A subject has too few records for a 6:2:2 split."""


@dataclass(frozen=True)
class Record:
    subject_id: int
    age: int
    sex: int
    test_time: float
    motor_updrs: float
    total_updrs: float
    voice: tuple

    def label(self, target_kind):
        if target_kind == "motor":
            return self.motor_updrs
        if target_kind == "total":
            return self.total_updrs
        raise ValueError(f"target_kind must be 'motor' or 'total', got {target_kind!r}")

    def features(self):
        return self.voice + (float(self.age), float(self.sex))


@dataclass(frozen=True)
class SubjectSeries:
    subject_id: int
    records: tuple

    def __post_init__(self):
        if not self.records:
            raise ValueError(f"subject {self.subject_id} has no records")
        if any(r.subject_id != self.subject_id for r in self.records):
            raise ValueError(f"subject {self.subject_id} holds foreign records")

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class Dataset:
    subjects: tuple
    target_kind: str = "motor"

    @property
    def n_records(self):
        return sum(len(s) for s in self.subjects)

    def subject(self, subject_id):
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(subject_id)

    def sources_for(self, target_id):
        return [s for s in self.subjects if s.subject_id != target_id]


@dataclass(frozen=True)
class TargetSplit:
    train_idx: tuple
    val_idx: tuple
    test_idx: tuple
    seed: int
    ratios: tuple = field(default=(0.6, 0.2, 0.2))


def _check_record(rec, where):
    for name, value in zip(VOICE_COLUMNS, rec.voice):
        if not math.isfinite(value):
            raise DataParseError(f"{where}: column {name!r} is not finite")
    for kind, value in (("motor", rec.motor_updrs), ("total", rec.total_updrs)):
        lo, hi = UPDRS_RANGE[kind]
        if not lo <= value <= hi:
            raise DataValidationError(
                f"{where}: {kind}_UPDRS={value} outside [{lo:g}, {hi:g}]")
    if rec.sex not in (0, 1):
        raise DataValidationError(f"{where}: sex={rec.sex} is not 0 or 1")


def _group(records, target_kind):
    by_subject = {}
    for rec in records:
        by_subject.setdefault(rec.subject_id, []).append(rec)
    subjects = tuple(
        SubjectSeries(sid, tuple(sorted(recs, key=lambda r: r.test_time)))
        for sid, recs in sorted(by_subject.items()))
    return Dataset(subjects, target_kind)


def _cell(text, row, column, as_int=False):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataParseError(
            f"row {row}: column {column!r} is not numeric ({text!r})") from None
    if not math.isfinite(value):
        raise DataParseError(f"row {row}: column {column!r} is not finite")
    if as_int:
        if value != int(value):
            raise DataParseError(f"row {row}: column {column!r} is not an integer")
        return int(value)
    return value


def load_dataset(path, target_kind="motor"):
    """Parse a ``parkinsons_updrs.data`` CSV into subjects ordered by test time.

    Row numbers in error messages are 1-based file lines (the header is line 1).
    """
    if target_kind not in TARGET_KINDS:
        raise ValueError(f"target_kind must be 'motor' or 'total', got {target_kind!r}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        extra = [c for c in header if c not in CSV_COLUMNS]
        if extra:
            raise SchemaError(f"{path}: unexpected column(s) {', '.join(extra)}")
        if len(header) != len(set(header)):
            raise SchemaError(f"{path}: duplicated column names")
        pos = {c: header.index(c) for c in CSV_COLUMNS}

        records = []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataParseError(
                    f"row {line}: expected {len(header)} cells, got {len(row)}")
            rec = Record(
                subject_id=_cell(row[pos["subject#"]], line, "subject#", True),
                age=_cell(row[pos["age"]], line, "age", True),
                sex=_cell(row[pos["sex"]], line, "sex", True),
                test_time=_cell(row[pos["test_time"]], line, "test_time"),
                motor_updrs=_cell(row[pos["motor_UPDRS"]], line, "motor_UPDRS"),
                total_updrs=_cell(row[pos["total_UPDRS"]], line, "total_UPDRS"),
                voice=tuple(_cell(row[pos[c]], line, c) for c in VOICE_COLUMNS),
            )
            _check_record(rec, f"row {line}")
            records.append(rec)
    if not records:
        raise DataValidationError(f"{path}: no data rows")
    return _group(records, target_kind)


def write_csv(dataset, path):
    """Write records back in the canonical column order."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for s in dataset.subjects:
            for r in s.records:
                w.writerow([r.subject_id, r.age, r.sex, repr(r.test_time),
                            repr(r.motor_updrs), repr(r.total_updrs)]
                           + [repr(v) for v in r.voice])


def dataset_to_json(dataset):
    rows = []
    for s in dataset.subjects:
        for r in s.records:
            rows.append({
                "subject_id": r.subject_id,
                "age": r.age,
                "sex": r.sex,
                "test_time": r.test_time,
                "motor_UPDRS": r.motor_updrs,
                "total_UPDRS": r.total_updrs,
                "voice": list(r.voice),
            })
    return json.dumps({"target_kind": dataset.target_kind, "records": rows})


def dataset_from_json(text):
    doc = json.loads(text)
    records = []
    for i, row in enumerate(doc["records"]):
        voice = tuple(float(v) for v in row["voice"])
        if len(voice) != len(VOICE_COLUMNS):
            raise SchemaError(f"record {i}: expected 16 voice values, got {len(voice)}")
        rec = Record(int(row["subject_id"]), int(row["age"]), int(row["sex"]),
                     float(row["test_time"]), float(row["motor_UPDRS"]),
                     float(row["total_UPDRS"]), voice)
        _check_record(rec, f"record {i}")
        records.append(rec)
    return _group(records, doc.get("target_kind", "motor"))


def split_sizes(n):
    n_val = n // 5
    return n - 2 * n_val, n_val, n_val


def make_target_split(subject, seed):
    """Uniform random 6:2:2 split of one subject's records.

    Validation and test each get ``floor(N / 5)`` records and the remainder
    goes to training. The permutation depends only on ``(subject_id, N, seed)``.
    """
    n = len(subject)
    if n < 5:
        raise DegenerateSubjectError(
            f"subject {subject.subject_id} has {n} records; at least 5 are needed")
    n_train, n_val, _ = split_sizes(n)
    perm = generator(seed, "split", subject.subject_id, n).permutation(n)
    train = tuple(sorted(int(i) for i in perm[:n_train]))
    val = tuple(sorted(int(i) for i in perm[n_train:n_train + n_val]))
    test = tuple(sorted(int(i) for i in perm[n_train + n_val:]))
    return TargetSplit(train, val, test, int(seed))


def feature_matrix(records, target_kind):
    """``(X, y)`` with columns ``[16 voice measures, age, sex]``, unscaled.

    Records may come from several subjects.
    """
    records = list(records)
    if not records:
        raise ValueError("feature_matrix needs at least one record")
    X = np.array([r.features() for r in records], dtype=np.float64)
    y = np.array([r.label(target_kind) for r in records], dtype=np.float64)
    return X, y


def make_synthetic_dataset(n_subjects=42, seed=0, records_range=(101, 168)):
    """Telemonitoring-shaped synthetic cohort for demos and tests.

    Subjects fall into latent progression clusters sharing a baseline level,
    a daily UPDRS slope and a voice signature. Some voice measures drift with
    time, so within-subject trends are learnable from the features, and
    subjects of the same cluster are useful transfer sources.
    """
    rng = generator(seed, "synthetic")
    d = len(VOICE_COLUMNS)
    n_clusters = max(1, n_subjects // 6)
    c_base = rng.uniform(10, 35, size=n_clusters)
    c_slope = rng.uniform(0.0, 0.04, size=n_clusters)
    c_sig = rng.normal(size=(n_clusters, d))
    drift = rng.normal(size=d) * (rng.random(d) < 0.4)
    c_w = rng.normal(size=(n_clusters, 2, d)) / np.sqrt(d)
    records = []
    for sid in range(1, n_subjects + 1):
        c = int(rng.integers(n_clusters))
        n = int(rng.integers(records_range[0], records_range[1] + 1))
        age = int(rng.integers(36, 86))
        sex = int(rng.integers(2))
        base = c_base[c] + rng.normal(0, 0.7)
        slope = max(0.0, c_slope[c] + rng.normal(0, 0.004))
        offset = c_sig[c] + 0.2 * rng.normal(size=d)
        times = np.sort(rng.uniform(-4.0, 215.0, size=n))
        for t in times:
            z = offset + drift * (t / 200.0) + rng.normal(size=d)
            signal = 3.0 * np.tanh(z @ c_w[c, 0]) * np.sin(1.5 * (z @ c_w[c, 1]))
            motor = base + slope * t + signal + rng.normal(0, 0.4)
            motor = float(np.clip(motor, 1.0, 100.0))
            total = float(np.clip(1.35 * motor + 3.0 + rng.normal(0, 0.4), 1.0, 170.0))
            voice = 0.005 * np.exp(0.3 * z)
            voice[11] = 0.02 * np.exp(0.3 * z[11])
            voice[12] = 21.0 + 2.0 * z[12]
            voice[13:16] = 0.5 + 0.1 * np.tanh(z[13:16])
            records.append(Record(sid, age, sex, float(t), motor, total,
                                  tuple(float(v) for v in voice)))
    return _group(records, "motor")
