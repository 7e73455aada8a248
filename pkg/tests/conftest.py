import os

import pytest

from psgt.dataset import Record, SubjectSeries, Dataset, make_synthetic_dataset

_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line and assert on it."""

    def check(name, ok, detail=""):
        _ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
        assert ok, f"{name}: {detail}"

    return check


def skip_criterion(name, reason):
    _ACCEPTANCE_LINES.append(f"SKIP  {name}  {reason}")
    pytest.skip(reason)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_cohort():
    return make_synthetic_dataset(n_subjects=6, seed=3, records_range=(30, 40))


def make_subject(sid, rows, age=60, sex=0):
    """Build a SubjectSeries from ``(voice16, motor, total)`` rows."""
    recs = tuple(Record(sid, age, sex, float(t), float(m), float(tt), tuple(float(v) for v in voice))
                 for t, (voice, m, tt) in enumerate(rows))
    return SubjectSeries(sid, recs)


def canonical_data_path():
    path = os.environ.get("PSGT_DATA")
    return path if path and os.path.exists(path) else None
