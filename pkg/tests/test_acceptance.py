"""Acceptance criteria, one test per criterion.

Criteria 1-4 need the UCI telemonitoring CSV; point ``PSGT_DATA`` at it to
run them, otherwise they are reported as SKIP. Criterion 5 times a full
default PSGT run on the canonical file when present, else on a synthetic
cohort with the same shape (42 subjects, 101-168 records each).
"""

import math
import os
import time

import numpy as np
import pytest

from psgt.dataset import load_dataset, make_synthetic_dataset, make_target_split
from psgt.experiment import ExperimentConfig, run_experiment
from psgt.metrics import mae, rmse, vol
from psgt.shapley import (
    Game,
    ShapleyVector,
    brute_force_shapley,
    build_family,
    exact_shapley,
    normalize_weights,
    simplified_shapley,
    squash,
)
from psgt.transfer import TransferConfig, run_psgt, run_rf

from conftest import canonical_data_path, make_subject, skip_criterion
from oracles import literal_coalition_sum, naive_mae, naive_rmse, naive_vol

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2, 3, 4)
NO_DATA = "canonical dataset unavailable (set PSGT_DATA to parkinsons_updrs.data)"


@pytest.fixture(scope="module")
def canonical_runs():
    path = canonical_data_path()
    if path is None:
        return None
    workers = os.cpu_count() or 1
    return {kind: run_experiment(ExperimentConfig(data_path=path, target_kind=kind,
                                                  seeds=SEEDS, workers=workers))
            for kind in ("motor", "total")}


def _mean_mae(report, method):
    return report.aggregate.row(method)["mae_mean"]


# quantitative, canonical data

def test_c01_ordering(canonical_runs, criterion):
    name = "C1 ordering PSGT < ST < RF"
    if canonical_runs is None:
        skip_criterion(name, NO_DATA)
    detail, ok = [], True
    for kind, rep in canonical_runs.items():
        p, s, r = (_mean_mae(rep, m) for m in ("PSGT", "ST", "RF"))
        ok &= p < s < r
        detail.append(f"{kind}: {p:.3f} < {s:.3f} < {r:.3f}")
    criterion(name, ok, "; ".join(detail))


def test_c02_magnitude(canonical_runs, criterion):
    name = "C2 PSGT MAE magnitude"
    if canonical_runs is None:
        skip_criterion(name, NO_DATA)
    motor = _mean_mae(canonical_runs["motor"], "PSGT")
    total = _mean_mae(canonical_runs["total"], "PSGT")
    criterion(name, 1.2 <= motor <= 2.2 and 1.5 <= total <= 2.6,
              f"motor {motor:.3f} in [1.2, 2.2], total {total:.3f} in [1.5, 2.6]")


def test_c03_relative_gain(canonical_runs, criterion):
    name = "C3 motor gain over ST >= 3%"
    if canonical_runs is None:
        skip_criterion(name, NO_DATA)
    rep = canonical_runs["motor"]
    gain = 1 - _mean_mae(rep, "PSGT") / _mean_mae(rep, "ST")
    criterion(name, gain >= 0.03, f"gain {100 * gain:.2f}%")


def test_c04_cap(canonical_runs, criterion):
    name = "C4 transfer cap"
    if canonical_runs is None:
        skip_criterion(name, NO_DATA)
    worst, runs = 0, 0
    for kind, rep in canonical_runs.items():
        L = rep.config.L
        for r in rep.results:
            if r.method == "PSGT" and r.plan is not None:
                runs += 1
                worst = max(worst, len(r.plan.selected) - r.n_records // L)
    criterion(name, runs > 0 and worst <= 0 and not any(rep.failures for rep in
                                                          canonical_runs.values()),
              f"{runs} runs, max overshoot {worst}")


@pytest.mark.slow
def test_c05_runtime(criterion):
    name = "C5 42-target PSGT run under 30 min"
    path = canonical_data_path()
    if path is not None:
        dataset, source = load_dataset(path, "motor"), "canonical data"
    else:
        dataset, source = make_synthetic_dataset(), "synthetic cohort of canonical shape"
    workers = os.cpu_count() or 1
    cfg = ExperimentConfig(target_kind="motor", methods=("psgt",), coalition_samples=256,
                           n_trees=30, workers=workers)
    start = time.perf_counter()
    rep = run_experiment(cfg, dataset)
    minutes = (time.perf_counter() - start) / 60
    criterion(name, minutes < 30 and len(rep.results) == 42 and not rep.failures,
              f"{minutes:.1f} min on {workers} core(s), {source}")


# property suites

def _random_game(n, rng):
    table = rng.normal(size=1 << n)
    return lambda c: table[sum(1 << p for p in c)]


def test_c06_exact_shapley_axioms(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(200):
        n = int(rng.integers(2, 9))
        f, g = _random_game(n, rng), _random_game(n, rng)
        phi = exact_shapley(Game(n, f))
        full = f(tuple(range(n))) - f(())
        worst = max(worst, abs(phi.sum() - full))

        a, b = rng.normal(size=2)
        lin = exact_shapley(Game(n, lambda c: a * f(c) + b * g(c)))
        worst = max(worst, np.abs(lin - (a * phi + b * exact_shapley(Game(n, g)))).max())

        # players 0 and 1 interchangeable
        sym = exact_shapley(Game(n, lambda c: f(tuple(sorted({0 if p == 1 else p for p in c})))
                                 + f(tuple(sorted({1 if p == 0 else p for p in c})))))
        worst = max(worst, abs(sym[0] - sym[1]))

        # last player is a dummy
        dummy = exact_shapley(Game(n, lambda c: f(tuple(p for p in c if p != n - 1))))
        worst = max(worst, abs(dummy[n - 1]))

        worst = max(worst, np.abs(phi - brute_force_shapley(Game(n, f))).max())
    criterion("C6 exact Shapley axioms and brute-force agreement", worst <= 1e-9,
              f"200 games, max deviation {worst:.2e}")


def test_c07_simplified_ordering(criterion):
    rng = np.random.default_rng(77)
    mismatches = 0
    for trial in range(200):
        m = int(rng.integers(1, 11))
        f = _random_game(m, rng)
        phi = simplified_shapley(Game(m, f), build_family(m, "exhaustive"))
        literal = np.array(literal_coalition_sum(f, m))
        same = (np.array_equal(np.argsort(phi, kind="stable"), np.argsort(literal, kind="stable"))
                and np.array_equal(np.sign(phi), np.sign(literal)))
        mismatches += not same
    criterion("C7 simplified Shapley matches literal sum ordering", mismatches == 0,
              f"{mismatches} mismatches in 200 games")


def test_c08_squash_and_weights(criterion):
    grid = squash(np.linspace(-20, 20, 1000))
    decreasing = bool(np.all(np.diff(grid) < 0))
    rng = np.random.default_rng(8)
    sum_err, argmax_ok = 0.0, True
    for _ in range(500):
        phi = rng.normal(scale=rng.uniform(0.01, 5), size=int(rng.integers(1, 12)))
        v = ShapleyVector.from_phi(phi)
        sum_err = max(sum_err, abs(v.psi.sum() - 1))
        sum_err = max(sum_err, abs(normalize_weights(rng.random(7) + 1e-6).sum() - 1))
        argmax_ok &= int(np.argmax(v.psi)) == int(np.argmin(phi))
    criterion("C8 squash and normalization",
              squash(0.0) == 0.5 and decreasing and sum_err <= 1e-12 and argmax_ok,
              f"decreasing={decreasing}, max sum error {sum_err:.1e}, argmax ok={argmax_ok}")


def test_c09_metrics(criterion):
    rng = np.random.default_rng(9)
    worst, rmse_ok = 0.0, True
    for _ in range(500):
        n = int(rng.integers(1, 300))
        a = rng.normal(20, 10, size=n)
        b = a + rng.normal(0, rng.uniform(0.01, 5), size=n)
        worst = max(worst, abs(mae(a, b) - naive_mae(a, b)), abs(rmse(a, b) - naive_rmse(a, b)),
                    abs(vol(a, b) - naive_vol(a, b)))
        rmse_ok &= rmse(a, b) >= mae(a, b)
    const = vol(np.arange(50.0) + 2.5, np.arange(50.0))
    criterion("C9 metrics vs naive loops", worst <= 1e-12 and const == 0.0 and rmse_ok,
              f"max deviation {worst:.1e}, constant-error Vol {const}")


def test_c10_split_invariants(criterion):
    bad = 0
    for n in range(5, 501):
        subj = make_subject(1, [((0.0,) * 16, 10.0, 12.0)] * n)
        for seed in range(50):
            s = make_target_split(subj, seed)
            idx = s.train_idx + s.val_idx + s.test_idx
            bad += not (sorted(idx) == list(range(n)) and len(s.val_idx) == len(s.test_idx) == n // 5
                        and len(s.train_idx) == n - 2 * (n // 5))
    criterion("C10 split partition and sizes", bad == 0, f"{bad} violations over N=5..500 x 50 seeds")


def test_c11_degenerate_identity(criterion):
    rng = np.random.default_rng(11)
    target = make_subject(1, [(tuple(rng.normal(size=16)), 20.0, 26.0) for _ in range(40)])
    # every source row pulls predictions away from the constant target label
    sources = [make_subject(s, [(tuple(rng.normal(size=16)), 40.0 + s, 52.0) for _ in range(25)])
               for s in range(2, 6)]
    checks = []
    for cfg in (TransferConfig(k=3, L=5, coalition_samples=32),
                TransferConfig(k=3, L=41, coalition_samples=32)):
        for seed in (0, 1, 2):
            p = run_psgt(target, sources, cfg, seed)
            r = run_rf(target, cfg, seed)
            checks.append(p.plan.selected == () and p.metrics == r.metrics)
    criterion("C11 empty selection equals RF bit-for-bit", all(checks),
              f"{sum(checks)}/{len(checks)} runs identical (positive-phi filter and zero cap)")


def test_c12_worker_determinism(tmp_path, criterion):
    ds = make_synthetic_dataset(8, seed=12, records_range=(40, 60))
    files = []
    for workers in (1, 2):
        cfg = ExperimentConfig(k=3, n_trees=10, coalition_samples=32, seeds=(0, 1),
                               workers=workers, output_dir=str(tmp_path / f"w{workers}"))
        files.append(run_experiment(cfg, ds).files)
    reports = ("aggregate.csv", "aggregate.json", "per_target.json", "contributions.csv")
    same = all(files[0][f].read_bytes() == files[1][f].read_bytes() for f in reports)
    criterion("C12 identical reports for 1 and 2 workers", same,
              ", ".join(reports) + " byte-compared")
