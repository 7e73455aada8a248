"""Command line entry point: ``psgt run``, ``psgt sweep-k`` and ``psgt synth``."""

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import yaml

from psgt.dataset import DataParseError, DataValidationError, SchemaError, make_synthetic_dataset, write_csv
from psgt.experiment import ExperimentConfig, run_experiment, sweep_k

DATA_ENV = "PSGT_DATA"

# flag dest -> ExperimentConfig field
_FLAG_FIELDS = {
    "data": "data_path",
    "target": "target_kind",
    "methods": "methods",
    "k": "k",
    "l": "L",
    "trees": "n_trees",
    "depth": "max_depth",
    "min_leaf": "min_samples_leaf",
    "mtry": "mtry",
    "coalition_samples": "coalition_samples",
    "family": "family_policy",
    "subject_game_train": "subject_payoff_includes_train",
    "seeds": "seeds",
    "workers": "workers",
    "out": "output_dir",
}


def _int_list(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _k_values(text):
    text = str(text)
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    return _int_list(text)


_UNLIMITED = "none"


def _depth(text):
    # kept as a marker so "no flag given" (None) stays distinguishable
    return _UNLIMITED if str(text).lower() in ("none", "inf") else int(text)


def _common(p):
    p.add_argument("--config", help="YAML or JSON file with ExperimentConfig fields")
    p.add_argument("--data", help=f"telemonitoring CSV (default: ${DATA_ENV})")
    p.add_argument("--target", choices=("motor", "total"))
    p.add_argument("--methods", type=lambda s: [m.strip() for m in s.split(",")])
    p.add_argument("--l", type=int, help="cap divisor L (transfer at most N/L rows)")
    p.add_argument("--trees", type=int)
    p.add_argument("--depth", type=_depth, help="max tree depth; 'none' for unlimited")
    p.add_argument("--min-leaf", type=int)
    p.add_argument("--mtry", type=int)
    p.add_argument("--coalition-samples", type=int)
    p.add_argument("--family", choices=("sampled", "exhaustive"))
    p.add_argument("--subject-game-train", type=lambda s: s.lower() in ("1", "true", "yes"),
                   help="train subject-coalition forests with the target rows (true/false)")
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="psgt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run RF / ST / PSGT on every target subject")
    _common(run)
    run.add_argument("--k", type=int)

    sweep = sub.add_parser("sweep-k", help="PSGT aggregates over a range of k")
    _common(sweep)
    sweep.add_argument("--k", type=_k_values, default=None,
                       help="'1:10' or a comma list (default 1:10)")

    synth = sub.add_parser("synth", help="write a synthetic telemonitoring-format CSV")
    synth.add_argument("--out", required=True)
    synth.add_argument("--subjects", type=int, default=42)
    synth.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(args, environ=os.environ):
    """Merge config file < environment < flags into an ExperimentConfig."""
    merged = {}
    if getattr(args, "config", None):
        loaded = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"{args.config}: expected a mapping of settings")
        known = {f.name for f in dataclasses.fields(ExperimentConfig)} | {"k_values"}
        unknown = sorted(set(loaded) - known)
        if unknown:
            raise ValueError(f"{args.config}: unknown setting(s) {', '.join(unknown)}")
        merged.update(loaded)
    if environ.get(DATA_ENV):
        merged["data_path"] = environ[DATA_ENV]
    for dest, name in _FLAG_FIELDS.items():
        value = getattr(args, dest, None)
        if value is not None and not (dest == "k" and isinstance(value, list)):
            merged[name] = value
    if str(merged.get("max_depth", "")).lower() in ("none", "inf"):
        merged["max_depth"] = None
    k_values = merged.pop("k_values", None)
    if isinstance(getattr(args, "k", None), list):
        k_values = args.k
    for key in ("methods", "seeds"):
        if isinstance(merged.get(key), str):
            merged[key] = merged[key].split(",")
    for key in ("methods", "seeds"):
        if key in merged:
            merged[key] = tuple(merged[key])
    return ExperimentConfig(**merged), k_values


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synth":
        write_csv(make_synthetic_dataset(args.subjects, args.seed), args.out)
        return 0
    try:
        cfg, k_values = resolve_config(args)
    except (ValueError, TypeError, OSError) as exc:
        print(f"psgt: bad configuration: {exc}", file=sys.stderr)
        return 2
    if cfg.data_path is None:
        print(f"psgt: no dataset; pass --data or set {DATA_ENV}", file=sys.stderr)
        return 2
    try:
        if args.command == "run":
            report = run_experiment(cfg)
            failures = len(report.failures)
            for row in report.aggregate.rows:
                if row["seed"] == "all":
                    print(f"{row['method']:>5}  MAE {row['mae_mean']:.4f} +/- {row['mae_std']:.4f}"
                          f"  RMSE {row['rmse_mean']:.4f} +/- {row['rmse_std']:.4f}"
                          f"  Vol {row['vol_mean']:.4f} +/- {row['vol_std']:.4f}"
                          f"  ({row['n_targets']} targets)")
        else:
            rows, failures = sweep_k(cfg, k_values or list(range(1, 11)))
            for r in rows:
                print(f"k={r['k']:>2}  MAE {r['mae_mean']:.4f}  RMSE {r['rmse_mean']:.4f}")
    except (SchemaError, DataParseError, DataValidationError, OSError) as exc:
        print(f"psgt: cannot read dataset: {exc}", file=sys.stderr)
        return 2
    if failures:
        print(f"psgt: {failures} target run(s) failed; see per_target.json", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
