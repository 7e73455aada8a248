"""Per-target experiment runs, aggregation and report files."""

import csv
import io
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from psgt.dataset import load_dataset
from psgt.forest import ForestConfig, default_forest_config
from psgt.transfer import RunResult, TransferConfig, run_psgt, run_rf, run_st

logger = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "ExperimentConfig",
    "AggregateReport",
    "ExperimentReport",
    "run_experiment",
    "aggregate",
    "sweep_k",
    "emit_contributions",
]

METHODS = ("rf", "st", "psgt")
_TAG = {"rf": "RF", "st": "ST", "psgt": "PSGT"}
_METRICS = ("mae", "rmse", "vol")


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment settings.

    ``L`` and ``n_trees`` left as None take the per-label defaults
    (motor: ``L=5``, 30 trees; total: ``L=6``, 50 trees).
    """

    data_path: str | None = None
    target_kind: str = "motor"
    methods: tuple = METHODS
    k: int = 5
    L: int | None = None
    n_trees: int | None = None
    max_depth: int | None = 50
    min_samples_leaf: int = 2
    mtry: int | None = None
    coalition_samples: int = 256
    family_policy: str = "sampled"
    subject_payoff_includes_train: bool = True
    seeds: tuple = (0,)
    workers: int = 1
    output_dir: str | None = None

    def __post_init__(self):
        if self.target_kind not in ("motor", "total"):
            raise ValueError(f"target_kind must be 'motor' or 'total', got {self.target_kind!r}")
        methods = tuple(str(m).lower() for m in self.methods)
        bad = [m for m in methods if m not in METHODS]
        if bad or not methods:
            raise ValueError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        object.__setattr__(self, "methods", tuple(m for m in METHODS if m in methods))
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ValueError("at least one seed is required")
        object.__setattr__(self, "seeds", seeds)
        if int(self.workers) < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    def resolved(self):
        """Copy with per-label defaults filled in."""
        default = default_forest_config(self.target_kind)
        return replace(self,
                       L=self.L if self.L is not None else (5 if self.target_kind == "motor" else 6),
                       n_trees=self.n_trees if self.n_trees is not None else default.n_trees)

    def transfer_config(self, seed):
        r = self.resolved()
        forest = ForestConfig(n_trees=r.n_trees, max_depth=r.max_depth,
                              min_samples_leaf=r.min_samples_leaf, mtry=r.mtry)
        return TransferConfig(k=r.k, L=r.L, coalition_samples=r.coalition_samples,
                              forest=forest, seed=seed, family_policy=r.family_policy,
                              subject_payoff_includes_train=r.subject_payoff_includes_train)


@dataclass(frozen=True)
class AggregateReport:
    """Mean and population std of each metric over targets.

    One row per (method, seed), plus a ``seed="all"`` row per method where
    each target's metrics are first averaged over seeds.
    """

    rows: tuple

    def row(self, method, seed="all"):
        for r in self.rows:
            if r["method"] == method and r["seed"] == seed:
                return r
        raise KeyError((method, seed))


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    results: list
    aggregate: AggregateReport
    files: dict = field(default_factory=dict)

    @property
    def failures(self):
        return [r for r in self.results if r.failure is not None]


_DATASET = None


def _init_worker(dataset):
    global _DATASET
    _DATASET = dataset


def _run_target(task):
    cfg, seed, target_id = task
    dataset = _DATASET
    target = dataset.subject(target_id)
    sources = dataset.sources_for(target_id)
    tcfg = cfg.transfer_config(seed)
    out = []
    for method in cfg.methods:
        try:
            if method == "rf":
                res = run_rf(target, tcfg, seed, cfg.target_kind)
            elif method == "st":
                res = run_st(target, sources, tcfg, seed, cfg.target_kind)
            else:
                res = run_psgt(target, sources, tcfg, seed, cfg.target_kind)
        except Exception as exc:
            logger.error("target %s seed %s %s failed: %s", target_id, seed, method, exc)
            res = RunResult(target_id, _TAG[method], None, None, seed, len(target),
                            failure=f"{type(exc).__name__}: {exc}\n"
                                    + traceback.format_exc(limit=3))
        out.append(res)
    return out


def _stats(values):
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def aggregate(results):
    """Build an :class:`AggregateReport` from per-target results (failures ignored)."""
    ok = [r for r in results if r.failure is None]
    rows = []
    for method in [_TAG[m] for m in METHODS]:
        mine = [r for r in ok if r.method == method]
        if not mine:
            continue
        seeds = sorted({r.seed for r in mine})
        for seed in seeds:
            per = sorted((r for r in mine if r.seed == seed), key=lambda r: r.target_id)
            row = {"method": method, "seed": seed, "n_targets": len(per)}
            for name in _METRICS:
                row[f"{name}_mean"], row[f"{name}_std"] = _stats(
                    [getattr(r.metrics, name) for r in per])
            rows.append(row)
        targets = sorted({r.target_id for r in mine})
        row = {"method": method, "seed": "all", "n_targets": len(targets)}
        for name in _METRICS:
            per_target = [np.mean([getattr(r.metrics, name) for r in mine if r.target_id == t])
                          for t in targets]
            row[f"{name}_mean"], row[f"{name}_std"] = _stats(per_target)
        rows.append(row)
    return AggregateReport(tuple(rows))


_AGG_COLUMNS = ("method", "seed", "n_targets", "mae_mean", "mae_std", "rmse_mean",
                "rmse_std", "vol_mean", "vol_std")


def _aggregate_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_AGG_COLUMNS)
    for row in report.rows:
        w.writerow([row[c] if not c.endswith(("_mean", "_std")) else f"{row[c]:.6f}"
                    for c in _AGG_COLUMNS])
    return buf.getvalue()


def emit_contributions(results):
    """CSV of transferred subject ids and their weights per PSGT run.

    Weights are written at full precision so every row sums to 1.
    """
    psgt = sorted((r for r in results if r.method == "PSGT" and r.failure is None
                   and r.plan is not None),
                  key=lambda r: (r.seed, r.target_id))
    width = max((len(r.plan.transferred) for r in psgt), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["seed", "target_id"]
    for i in range(1, width + 1):
        header += [f"subject_{i}", f"psi_{i}"]
    w.writerow(header)
    for r in psgt:
        line = [r.seed, r.target_id]
        for sid, psi in zip(r.plan.transferred, r.plan.importance.psi):
            line += [sid, repr(float(psi))]
        line += [""] * (len(header) - len(line))
        w.writerow(line)
    return buf.getvalue()


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_reports(report, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "run_config.json": _dump(asdict(report.config)),
        "per_target.json": _dump([r.to_dict() for r in report.results]),
        "aggregate.csv": _aggregate_csv(report.aggregate),
        "aggregate.json": _dump(list(report.aggregate.rows)),
        "contributions.csv": emit_contributions(report.results),
    }
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
    report.files = {name: out / name for name in files}
    return report.files


def run_experiment(cfg, dataset=None):
    """Run every method on every (seed, target) pair.

    ``dataset`` overrides loading from ``cfg.data_path``. Failed targets are
    kept as failure records and skipped by the aggregates. Results are
    ordered by (seed, method, target) whatever the worker count.
    """
    cfg = cfg.resolved()
    if dataset is None:
        if cfg.data_path is None:
            raise ValueError("no dataset given and no data_path configured")
        dataset = load_dataset(cfg.data_path, cfg.target_kind)
    tasks = [(cfg, seed, s.subject_id) for seed in cfg.seeds for s in dataset.subjects]
    if cfg.workers == 1 or len(tasks) == 1:
        _init_worker(dataset)
        chunks = [_run_target(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_init_worker,
                                 initargs=(dataset,)) as pool:
            chunks = list(pool.map(_run_target, tasks))
    order = {_TAG[m]: i for i, m in enumerate(METHODS)}
    results = sorted((r for chunk in chunks for r in chunk),
                     key=lambda r: (r.seed, order[r.method], r.target_id))
    report = ExperimentReport(cfg, results, aggregate(results))
    if cfg.output_dir is not None:
        write_reports(report, cfg.output_dir)
    return report


def sweep_k(cfg, k_values, dataset=None):
    """PSGT aggregates for each ``k``; returns rows and writes ``sweep_k.csv``.

    Each ``k`` uses the same seeds; its full reports go to ``<out>/k_<k>/``.
    """
    k_values = [int(k) for k in k_values]
    if not k_values:
        raise ValueError("k_values must be non-empty")
    cfg = cfg.resolved()
    if dataset is None:
        dataset = load_dataset(cfg.data_path, cfg.target_kind)
    rows = []
    failures = 0
    for k in k_values:
        sub_out = None if cfg.output_dir is None else str(Path(cfg.output_dir) / f"k_{k}")
        rep = run_experiment(replace(cfg, k=k, methods=("psgt",), output_dir=sub_out), dataset)
        failures += len(rep.failures)
        agg = rep.aggregate.row("PSGT")
        rows.append({"k": k, "mae_mean": agg["mae_mean"], "mae_std": agg["mae_std"],
                     "rmse_mean": agg["rmse_mean"], "rmse_std": agg["rmse_std"]})
    if cfg.output_dir is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "mae_mean", "mae_std", "rmse_mean", "rmse_std"])
        for r in rows:
            w.writerow([r["k"]] + [f"{r[c]:.6f}" for c in
                                   ("mae_mean", "mae_std", "rmse_mean", "rmse_std")])
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.output_dir) / "sweep_k.csv").write_text(buf.getvalue(), encoding="utf-8")
        (Path(cfg.output_dir) / "run_config.json").write_text(
            _dump({**asdict(cfg), "k_values": k_values}), encoding="utf-8")
    return rows, failures
