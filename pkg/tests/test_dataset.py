import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psgt.dataset import (
    CSV_COLUMNS,
    DataParseError,
    DataValidationError,
    DegenerateSubjectError,
    SchemaError,
    dataset_from_json,
    dataset_to_json,
    feature_matrix,
    load_dataset,
    make_synthetic_dataset,
    make_target_split,
    write_csv,
)

from conftest import make_subject


def _row(subject=1, motor=20.0, total=28.0, time=1.5, **over):
    row = {c: 0.01 for c in CSV_COLUMNS}
    row.update({"subject#": subject, "age": 70, "sex": 1, "test_time": time,
                "motor_UPDRS": motor, "total_UPDRS": total, "HNR": 21.5})
    row.update(over)
    return row


def _write(path, rows, columns=CSV_COLUMNS):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] for c in columns])
    return path


def test_minimal_file_one_subject(tmp_path):
    path = _write(tmp_path / "d.csv", [_row(time=3), _row(time=1), _row(time=2)])
    ds = load_dataset(path, "motor")
    assert len(ds.subjects) == 1
    assert ds.n_records == 3
    assert [r.test_time for r in ds.subjects[0].records] == [1.0, 2.0, 3.0]


def test_missing_column_is_named(tmp_path):
    cols = [c for c in CSV_COLUMNS if c != "HNR"]
    path = _write(tmp_path / "d.csv", [_row()], cols)
    with pytest.raises(SchemaError, match="HNR"):
        load_dataset(path)


def test_extra_column_is_named(tmp_path):
    cols = list(CSV_COLUMNS) + ["bogus"]
    path = _write(tmp_path / "d.csv", [dict(_row(), bogus=1)], cols)
    with pytest.raises(SchemaError, match="bogus"):
        load_dataset(path)


def test_non_numeric_cell_reports_row(tmp_path):
    path = _write(tmp_path / "d.csv", [_row(), _row(PPE="abc")])
    with pytest.raises(DataParseError, match="row 3"):
        load_dataset(path)


def test_out_of_range_updrs(tmp_path):
    path = _write(tmp_path / "d.csv", [_row(motor=120.0)])
    with pytest.raises(DataValidationError, match="motor_UPDRS"):
        load_dataset(path)
    path = _write(tmp_path / "e.csv", [_row(total=-1.0)])
    with pytest.raises(DataValidationError, match="total_UPDRS"):
        load_dataset(path)


def test_columns_may_be_reordered(tmp_path):
    cols = list(reversed(CSV_COLUMNS))
    path = _write(tmp_path / "d.csv", [_row(PPE=0.3)], cols)
    rec = load_dataset(path).subjects[0].records[0]
    assert rec.voice[-1] == 0.3


def test_csv_and_json_round_trip(tmp_path):
    ds = make_synthetic_dataset(n_subjects=3, seed=5, records_range=(6, 9))
    write_csv(ds, tmp_path / "d.csv")
    again = load_dataset(tmp_path / "d.csv", "motor")
    assert again == ds
    assert dataset_from_json(dataset_to_json(ds)) == ds


def test_synthetic_cohort_shape():
    ds = make_synthetic_dataset()
    assert len(ds.subjects) == 42
    assert all(101 <= len(s) <= 168 for s in ds.subjects)


@pytest.mark.parametrize("n, sizes", [(150, (90, 30, 30)), (143, (87, 28, 28)), (5, (3, 1, 1))])
def test_split_sizes(n, sizes):
    subj = make_subject(7, [((0.1,) * 16, 10.0, 12.0)] * n)
    split = make_target_split(subj, seed=11)
    assert (len(split.train_idx), len(split.val_idx), len(split.test_idx)) == sizes


def test_split_is_deterministic_and_seed_dependent():
    subj = make_subject(7, [((0.1,) * 16, 10.0, 12.0)] * 60)
    a = make_target_split(subj, 3)
    assert make_target_split(subj, 3) == a
    assert make_target_split(subj, 4) != a


def test_degenerate_subject():
    subj = make_subject(7, [((0.1,) * 16, 10.0, 12.0)] * 4)
    with pytest.raises(DegenerateSubjectError):
        make_target_split(subj, 0)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(5, 500), seed=st.integers(0, 2**31))
def test_split_partition_property(n, seed):
    subj = make_subject(1, [((0.1,) * 16, 10.0, 12.0)] * n)
    s = make_target_split(subj, seed)
    parts = [set(s.train_idx), set(s.val_idx), set(s.test_idx)]
    assert set().union(*parts) == set(range(n))
    assert sum(len(p) for p in parts) == n
    assert len(s.val_idx) == len(s.test_idx) == n // 5


def test_feature_matrix_layout():
    voice = tuple(float(i) for i in range(16))
    a = make_subject(1, [(voice, 10.0, 15.0)], age=66, sex=1)
    b = make_subject(2, [(voice, 11.0, 17.0)], age=50, sex=0)
    X, y = feature_matrix(a.records + b.records, "motor")
    assert X.shape == (2, 18)
    np.testing.assert_array_equal(X[0], list(range(16)) + [66, 1])
    X2, y2 = feature_matrix(a.records + b.records, "total")
    np.testing.assert_array_equal(X, X2)
    assert y.tolist() == [10.0, 11.0] and y2.tolist() == [15.0, 17.0]


def test_feature_matrix_single_and_empty():
    a = make_subject(1, [((0.5,) * 16, 10.0, 15.0)])
    X, y = feature_matrix(a.records, "motor")
    assert X.shape == (1, 18) and y.shape == (1,)
    with pytest.raises(ValueError):
        feature_matrix([], "motor")
