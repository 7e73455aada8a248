"""Patient-specific instance transfer.

For one target subject the pipeline is:

1. rank source subjects by how well a forest trained on each of them predicts
   the target's validation records, keep the ``k`` best;
2. value those ``k`` subjects with exact Shapley values of the game
   "validation MAE of a forest trained on the target's training records plus
   the coalition's records", turn values into weights and per-subject quotas
   capped by ``floor(N / L)``;
3. value every instance of a kept subject with a sampled coalition-sum game
   whose payoff is the validation MAE change relative to the training-only
   forest (negative means the instances help);
4. take each subject's best-scored instances up to its quota, drop those with
   a positive score, and fit the final forest on training records plus the
   selected instances.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from psgt._random import derive_seed
from psgt.dataset import feature_matrix, make_target_split
from psgt.forest import ForestConfig, default_forest_config, fit_forest
from psgt.metrics import MetricsReport, evaluate, mae
from psgt.shapley import Game, ShapleyVector, build_family, exact_shapley, simplified_shapley

logger = logging.getLogger(__name__)

__all__ = [
    "TransferConfig",
    "SubjectRanking",
    "SubjectImportance",
    "InstanceScore",
    "TransferPlan",
    "RunResult",
    "rank_subjects",
    "select_top_k",
    "subject_shapley",
    "allocate_counts",
    "score_instances",
    "select_instances",
    "run_psgt",
    "run_st",
    "run_rf",
    "PSGTRegressor",
]


@dataclass(frozen=True)
class TransferConfig:
    """Settings of one transfer run.

    ``L`` is the cap divisor: at most ``floor(N / L)`` instances are
    transferred, ``N`` being the target's record count.
    ``subject_payoff_includes_train=False`` trains subject-coalition forests on
    the coalition records alone (sensitivity variant).
    """

    k: int = 5
    L: int = 5
    coalition_samples: int = 256
    forest: ForestConfig = field(default_factory=ForestConfig)
    seed: int = 0
    family_policy: str = "sampled"
    subject_payoff_includes_train: bool = True

    def __post_init__(self):
        if int(self.k) < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if int(self.L) < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if int(self.coalition_samples) < 1:
            raise ValueError(f"coalition_samples must be >= 1, got {self.coalition_samples}")
        if self.family_policy not in ("sampled", "exhaustive"):
            raise ValueError(f"unknown family_policy {self.family_policy!r}")

    @classmethod
    def for_target(cls, target_kind, **overrides):
        """Defaults per label: ``L=5`` and 30 trees for motor, ``L=6`` and 50 trees for total."""
        base = cls(k=5, L=5 if target_kind == "motor" else 6,
                   forest=default_forest_config(target_kind))
        return replace(base, **overrides)


@dataclass(frozen=True)
class SubjectRanking:
    subject_ids: tuple
    val_mae: tuple

    def __len__(self):
        return len(self.subject_ids)

    def mae_of(self, subject_id):
        return self.val_mae[self.subject_ids.index(subject_id)]


@dataclass(frozen=True)
class SubjectImportance:
    subject_ids: tuple
    values: ShapleyVector
    m: tuple
    coalition_losses: dict

    @property
    def phi(self):
        return self.values.phi

    @property
    def psi(self):
        return self.values.psi


@dataclass(frozen=True)
class InstanceScore:
    subject_id: int
    record_index: int
    phi: float
    missing: bool = False


@dataclass(frozen=True)
class TransferPlan:
    transferred: tuple
    val_mae: tuple
    importance: SubjectImportance | None
    quotas: tuple
    selected: tuple
    cap: int

    def selected_count(self, subject_id):
        return sum(1 for s in self.selected if s.subject_id == subject_id)

    def to_dict(self):
        subjects = []
        for i, sid in enumerate(self.transferred):
            entry = {"id": int(sid), "val_mae": float(self.val_mae[i])}
            if self.importance is not None:
                entry.update(phi=float(self.importance.phi[i]),
                             psi=float(self.importance.psi[i]),
                             num_i=int(self.quotas[i]),
                             selected_count=self.selected_count(sid))
            subjects.append(entry)
        return {"transferred_subjects": subjects,
                "spl_size": len(self.selected), "cap": int(self.cap)}


@dataclass(frozen=True)
class RunResult:
    target_id: int
    method: str
    metrics: MetricsReport | None
    plan: TransferPlan | None = None
    seed: int = 0
    n_records: int = 0
    failure: str | None = None

    def to_dict(self):
        out = {"target_id": int(self.target_id), "method": self.method,
               "seed": int(self.seed), "n_records": int(self.n_records)}
        if self.metrics is not None:
            out.update(mae=self.metrics.mae, rmse=self.metrics.rmse, vol=self.metrics.vol)
        if self.plan is not None:
            out.update(self.plan.to_dict())
        if self.failure is not None:
            out["failure"] = self.failure
        return out


def _xy(data, target_kind):
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], np.ndarray):
        return data
    return feature_matrix(data, target_kind)


def _pool(source, target_kind):
    """Normalize sources to ``{subject_id: (X, y)}``."""
    if isinstance(source, dict):
        return source
    return {s.subject_id: feature_matrix(s.records, target_kind) for s in source}


def rank_subjects(source, target_val, forest_cfg, target_kind="motor"):
    """Sort source subjects by validation MAE of a forest trained on each.

    Ties keep ascending subject id. Subjects with fewer than two records are
    skipped with a warning.
    """
    pool = _pool(source, target_kind)
    X_val, y_val = _xy(target_val, target_kind)
    if not pool:
        raise ValueError("no source subjects to rank")
    if len(y_val) == 0:
        raise ValueError("target validation set is empty")
    scored = []
    for sid in sorted(pool):
        X, y = pool[sid]
        if len(y) < 2:
            logger.warning("source subject %s has %d record(s); excluded from ranking",
                           sid, len(y))
            continue
        cfg = forest_cfg.with_seed(derive_seed(forest_cfg.seed, "rank", sid))
        scored.append((mae(y_val, fit_forest(X, y, cfg).predict(X_val)), sid))
    scored.sort()
    return SubjectRanking(tuple(s for _, s in scored), tuple(m for m, _ in scored))


def select_top_k(ranking, k):
    if k < 1 or k > len(ranking):
        raise ValueError(f"k={k} but {len(ranking)} ranked source subject(s) are available")
    return ranking.subject_ids[:k]


def _stack(parts):
    X = np.vstack([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    return X, y


def subject_shapley(transferred, source, train, val, forest_cfg, target_kind="motor",
                    include_train=True):
    """Exact Shapley values of the transferred subjects, plus weights.

    The coalition payoff is the validation MAE of a forest trained on the
    target training records together with all records of the coalition's
    subjects; the empty coalition is the training-only forest. Every
    coalition uses the same forest seed.
    """
    pool = _pool(source, target_kind)
    train = _xy(train, target_kind)
    X_val, y_val = _xy(val, target_kind)
    transferred = tuple(transferred)

    def payoff(coalition):
        parts = [pool[transferred[p]] for p in coalition]
        if include_train or not parts:
            parts = [train] + parts
        X, y = _stack(parts)
        return mae(y_val, fit_forest(X, y, forest_cfg).predict(X_val))

    game = Game(len(transferred), payoff)
    phi = exact_shapley(game)
    losses = {tuple(transferred[i] for i in range(len(transferred)) if mask >> i & 1): v
              for mask, v in game.memo.items()}
    return SubjectImportance(transferred, ShapleyVector.from_phi(phi),
                             tuple(len(pool[s][1]) for s in transferred), losses)


def allocate_counts(importance, spl_num):
    """Per-subject quotas ``floor(psi_i * spl_num)``, clamped to the subject size.

    Clamped surplus is not redistributed, so the total never exceeds ``spl_num``.
    """
    if spl_num < 0:
        raise ValueError(f"spl_num must be >= 0, got {spl_num}")
    psi = np.asarray(importance.psi, dtype=np.float64)
    # tolerance absorbs representation error such as 0.3 * 10 = 2.9999...
    raw = np.floor(psi * spl_num + 1e-9).astype(np.int64)
    quotas = np.minimum(raw, np.asarray(importance.m, dtype=np.int64))
    while quotas.sum() > spl_num:
        quotas[int(np.argmax(quotas))] -= 1
    return tuple(int(q) for q in quotas)


def score_instances(subject, train, val, forest_cfg, family=None, target_kind="motor",
                    baseline=None, subject_id=None, coalition_samples=256, family_seed=0):
    """Baseline-relative coalition-sum value of each instance of one subject.

    ``subject`` is a :class:`~psgt.dataset.SubjectSeries` or an ``(X, y)``
    pair. The payoff of a coalition ``C`` of its instances is
    ``MAE(forest on train + C) - MAE(forest on train)`` on the validation
    records. If ``family`` is None a sampled family of ``coalition_samples``
    coalitions is drawn from ``family_seed``.
    """
    if subject_id is None:
        subject_id = getattr(subject, "subject_id", -1)
    X_s, y_s = _xy(subject.records if hasattr(subject, "records") else subject, target_kind)
    X_tr, y_tr = _xy(train, target_kind)
    X_val, y_val = _xy(val, target_kind)
    m = len(y_s)
    if m < 1:
        raise ValueError(f"subject {subject_id} has no instances")
    if baseline is None:
        baseline = mae(y_val, fit_forest(X_tr, y_tr, forest_cfg).predict(X_val))
    if family is None:
        family = build_family(m, "sampled", coalition_samples, family_seed)

    def payoff(coalition):
        rows = list(coalition)
        X = np.vstack([X_tr, X_s[rows]])
        y = np.concatenate([y_tr, y_s[rows]])
        return mae(y_val, fit_forest(X, y, forest_cfg).predict(X_val)) - baseline

    phi = simplified_shapley(Game(m, payoff), family)
    missing = np.isnan(phi)
    if missing.any():
        logger.warning("subject %s: %d instance(s) in no sampled coalition; ranked last",
                       subject_id, int(missing.sum()))
    return [InstanceScore(int(subject_id), j, float(phi[j]), bool(missing[j]))
            for j in range(m)]


def select_instances(scores, quotas):
    """Pick each subject's ``Num_i`` lowest-scored instances, then drop positive scores.

    ``scores`` maps subject id to its :class:`InstanceScore` list and
    ``quotas`` maps subject id to ``Num_i``. Ties break on
    ``(subject_id, record_index)``; instances without a score rank last and
    are never selected.
    """
    selected = []
    for sid, quota in quotas.items():
        ranked = sorted(scores.get(sid, ()), key=lambda s: (
            s.missing, s.phi if not s.missing else 0.0, s.subject_id, s.record_index))
        for s in ranked[:quota]:
            if not s.missing and s.phi <= 0:
                selected.append(s)
    return tuple(selected)


def _stage_cfg(cfg, stage, target_id):
    return cfg.forest.with_seed(derive_seed(cfg.seed, stage, target_id))


def _effective_k(cfg, n_sources, target_id):
    if cfg.k > n_sources:
        logger.warning("target %s: k=%d exceeds %d usable source subject(s); using k=%d",
                       target_id, cfg.k, n_sources, n_sources)
        return n_sources
    return cfg.k


def _transfer_plan(pool, train, val, n_target, cfg, target_id):
    """Stages 1-4 on array inputs; returns the plan and the transferred rows."""
    ranking = rank_subjects(pool, val, _stage_cfg(cfg, "rank", target_id))
    k = _effective_k(cfg, len(ranking), target_id)
    chosen = select_top_k(ranking, k)
    game_cfg = _stage_cfg(cfg, "game", target_id)
    importance = subject_shapley(chosen, pool, train, val, game_cfg,
                                 include_train=cfg.subject_payoff_includes_train)
    cap = n_target // cfg.L
    quotas = allocate_counts(importance, cap)

    X_val, y_val = val
    if cfg.subject_payoff_includes_train:
        baseline = importance.coalition_losses[()]
    else:
        baseline = mae(y_val, fit_forest(*train, game_cfg).predict(X_val))
    scores = {}
    for sid, quota in zip(chosen, quotas):
        if quota == 0:
            continue
        X_s, _ = pool[sid]
        family = None
        if cfg.family_policy == "exhaustive":
            family = build_family(len(X_s), "exhaustive")
        scores[sid] = score_instances(
            pool[sid], train, val, game_cfg, family, baseline=baseline, subject_id=sid,
            coalition_samples=cfg.coalition_samples,
            family_seed=derive_seed(cfg.seed, "family", target_id, sid))
    selected = select_instances(scores, dict(zip(chosen, quotas)))
    plan = TransferPlan(chosen, tuple(ranking.mae_of(s) for s in chosen), importance,
                        quotas, selected, cap)
    rows = [(pool[s.subject_id][0][s.record_index], pool[s.subject_id][1][s.record_index])
            for s in selected]
    return plan, rows


def _target_parts(target, split_seed, target_kind):
    split = make_target_split(target, split_seed)
    recs = target.records
    train = feature_matrix([recs[i] for i in split.train_idx], target_kind)
    val = feature_matrix([recs[i] for i in split.val_idx], target_kind)
    test = feature_matrix([recs[i] for i in split.test_idx], target_kind)
    return train, val, test


def _final(train_X, train_y, test, cfg, target_id):
    forest = fit_forest(train_X, train_y, _stage_cfg(cfg, "final", target_id))
    X_test, y_test = test
    return evaluate(y_test, forest.predict(X_test))


def run_psgt(target, source, cfg, split_seed, target_kind="motor"):
    """Full transfer pipeline for one target; metrics are on its test split."""
    tid = target.subject_id
    source = [s for s in source if s.subject_id != tid]
    train, val, test = _target_parts(target, split_seed, target_kind)
    plan, rows = _transfer_plan(_pool(source, target_kind), train, val, len(target), cfg, tid)
    X, y = train
    if rows:
        X = np.vstack([X, np.array([r[0] for r in rows])])
        y = np.concatenate([y, np.array([r[1] for r in rows])])
    metrics = _final(X, y, test, cfg, tid)
    return RunResult(tid, "PSGT", metrics, plan, int(split_seed), len(target))


def run_st(target, source, cfg, split_seed, target_kind="motor"):
    """Subject-transfer baseline: add every record of the top-``k`` subjects."""
    tid = target.subject_id
    source = [s for s in source if s.subject_id != tid]
    train, val, test = _target_parts(target, split_seed, target_kind)
    pool = _pool(source, target_kind)
    ranking = rank_subjects(pool, val, _stage_cfg(cfg, "rank", tid))
    chosen = select_top_k(ranking, _effective_k(cfg, len(ranking), tid))
    X, y = _stack([train] + [pool[s] for s in chosen])
    metrics = _final(X, y, test, cfg, tid)
    plan = TransferPlan(chosen, tuple(ranking.mae_of(s) for s in chosen), None, (), (), 0)
    return RunResult(tid, "ST", metrics, plan, int(split_seed), len(target))


def run_rf(target, cfg, split_seed, target_kind="motor"):
    """Forest trained on the target's own training split only."""
    train, _, test = _target_parts(target, split_seed, target_kind)
    metrics = _final(*train, test, cfg, target.subject_id)
    return RunResult(target.subject_id, "RF", metrics, None, int(split_seed), len(target))


class PSGTRegressor(RegressorMixin, BaseEstimator):
    """Estimator form of the transfer pipeline for one target subject.

    ``fit`` takes the target's training rows as ``X, y`` and its validation
    rows and the labelled source subjects as keyword arguments.

    Parameters
    ----------
    k : int, default=5
        Number of source subjects kept after ranking.
    cap_divisor : int, default=5
        At most ``floor(n_target / cap_divisor)`` source rows are transferred.
    n_estimators, max_depth, min_samples_leaf, max_features
        Forest settings shared by every stage (see
        :class:`~psgt.forest.CartForestRegressor`).
    coalition_samples : int, default=256
        Sampled coalitions per instance game.
    family : {"sampled", "exhaustive"}, default="sampled"
    subject_payoff_includes_train : bool, default=True
    random_state : int, default=0
    target_id : int, default=0
        Key mixed into stage seeds; set it to the subject id to reproduce
        :func:`run_psgt`.

    Attributes
    ----------
    plan_ : TransferPlan
    forest_ : Forest
        Final model trained on the target rows plus the transferred rows.
    """

    def __init__(self, k=5, cap_divisor=5, n_estimators=30, max_depth=50,
                 min_samples_leaf=2, max_features=None, coalition_samples=256,
                 family="sampled", subject_payoff_includes_train=True,
                 random_state=0, target_id=0):
        self.k = k
        self.cap_divisor = cap_divisor
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.coalition_samples = coalition_samples
        self.family = family
        self.subject_payoff_includes_train = subject_payoff_includes_train
        self.random_state = random_state
        self.target_id = target_id

    def _transfer_config(self):
        forest = ForestConfig(n_trees=self.n_estimators, max_depth=self.max_depth,
                              min_samples_leaf=self.min_samples_leaf,
                              mtry=self.max_features)
        return TransferConfig(k=self.k, L=self.cap_divisor,
                              coalition_samples=self.coalition_samples, forest=forest,
                              seed=self.random_state, family_policy=self.family,
                              subject_payoff_includes_train=self.subject_payoff_includes_train)

    def fit(self, X, y, *, X_val, y_val, X_source, y_source, source_groups, n_target=None):
        """Select transferred rows and fit the final forest.

        Parameters
        ----------
        X, y : target training rows.
        X_val, y_val : target validation rows used by every selection stage.
        X_source, y_source : rows of all source subjects.
        source_groups : array-like of int
            Subject id of each source row.
        n_target : int, optional
            Total target record count ``N`` used for the cap; defaults to
            ``len(X) + len(X_val)``.
        """
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        X_val, y_val = check_X_y(X_val, y_val, dtype=np.float64, y_numeric=True)
        X_source, y_source = check_X_y(X_source, y_source, dtype=np.float64, y_numeric=True)
        groups = np.asarray(source_groups)
        if groups.shape != (X_source.shape[0],):
            raise ValueError("source_groups must give one subject id per source row")
        if X_val.shape[1] != X.shape[1] or X_source.shape[1] != X.shape[1]:
            raise ValueError("target, validation and source rows need the same features")
        pool = {int(g): (X_source[groups == g], y_source[groups == g])
                for g in np.unique(groups)}
        cfg = self._transfer_config()
        n_target = len(y) + len(y_val) if n_target is None else int(n_target)
        self.plan_, rows = _transfer_plan(pool, (X, y), (X_val, y_val), n_target, cfg,
                                          self.target_id)
        if rows:
            X = np.vstack([X, np.array([r[0] for r in rows])])
            y = np.concatenate([y, np.array([r[1] for r in rows])])
        self.forest_ = fit_forest(X, y, _stage_cfg(cfg, "final", self.target_id))
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "forest_")
        return self.forest_.predict(check_array(X, dtype=np.float64))
