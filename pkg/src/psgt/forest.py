"""Bagged CART regression forest used as both similarity probe and final model."""

import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from psgt import _tree
from psgt._random import derive_seed

__all__ = [
    "ForestConfig",
    "Forest",
    "CartForestRegressor",
    "fit_forest",
    "predict",
    "default_forest_config",
]


@dataclass(frozen=True)
class ForestConfig:
    """Hyperparameters of the bagged tree ensemble.

    ``mtry=None`` resolves to ``ceil(d / 3)`` at fit time and
    ``max_depth=None`` means unlimited depth.
    """

    n_trees: int = 30
    max_depth: int | None = 50
    min_samples_leaf: int = 2
    mtry: int | None = None
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self):
        if int(self.n_trees) < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth is not None and int(self.max_depth) < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")
        if int(self.min_samples_leaf) < 1:
            raise ValueError(
                f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.mtry is not None and int(self.mtry) < 1:
            raise ValueError(f"mtry must be >= 1, got {self.mtry}")

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def resolved_mtry(self, n_features):
        mtry = math.ceil(n_features / 3) if self.mtry is None else int(self.mtry)
        if mtry > n_features:
            raise ValueError(f"mtry={mtry} exceeds the {n_features} features")
        return mtry


def default_forest_config(target_kind, seed=0):
    """Forest settings tuned per label: 30 trees for motor, 50 for total."""
    if target_kind == "motor":
        return ForestConfig(n_trees=30, max_depth=50, seed=seed)
    if target_kind == "total":
        return ForestConfig(n_trees=50, max_depth=50, seed=seed)
    raise ValueError(f"target_kind must be 'motor' or 'total', got {target_kind!r}")


@dataclass(frozen=True, eq=False)
class Forest:
    """A trained forest. Node arrays are shared by all trees; ``roots`` indexes them."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    n_features: int
    y_range: tuple
    config: ForestConfig

    def __post_init__(self):
        for arr in (self.feature, self.threshold, self.left, self.right,
                    self.value, self.roots):
            arr.setflags(write=False)

    @property
    def n_trees(self):
        return int(self.roots.shape[0])

    def predict(self, X):
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"expected {self.n_features} features, got shape {X.shape}")
        return _tree.predict_kernel(X, self.feature, self.threshold, self.left,
                                    self.right, self.value, self.roots)

    def to_json(self):
        """Debug dump of the node arrays; not a stable format."""
        return json.dumps({
            "config": asdict(self.config),
            "n_features": self.n_features,
            "roots": self.roots.tolist(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        })


def _as_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError(f"cannot fit a forest on empty input {X.shape}")
    if y.shape != (X.shape[0],):
        raise ValueError(f"y shape {y.shape} does not match {X.shape[0]} rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    return np.ascontiguousarray(X), np.ascontiguousarray(y)


def fit_forest(X, y, config=ForestConfig()):
    """Train ``config.n_trees`` trees on bootstrap resamples of ``(X, y)``.

    Tree ``t`` draws its bootstrap rows and candidate features from a stream
    keyed only by ``(config.seed, t)``, so the result is independent of how
    tree training is scheduled.
    """
    if isinstance(X, list) and X and len({len(r) for r in X}) > 1:
        raise ValueError("rows of X have different lengths")
    X, y = _as_xy(X, y)
    mtry = config.resolved_mtry(X.shape[1])
    depth = _tree.NO_DEPTH_LIMIT if config.max_depth is None else int(config.max_depth)
    seed = np.uint64(derive_seed(config.seed, "forest"))
    feat, thr, left, right, value, roots, _ = _tree.fit_forest_kernel(
        X, y, int(config.n_trees), depth, int(config.min_samples_leaf), mtry,
        seed, bool(config.bootstrap))
    return Forest(feat, thr, left, right, value, roots, int(X.shape[1]),
                  (float(y.min()), float(y.max())), config)


def bootstrap_indices(n, config, tree):
    """Rows resampled for ``tree`` by :func:`fit_forest` under ``config``."""
    seed = np.uint64(derive_seed(config.seed, "forest"))
    idx, _ = _tree.bootstrap_sample(int(n), seed, int(tree))
    return idx


def predict(forest, x):
    """Predict one sample (1-D ``x``) or a batch (2-D)."""
    x = np.asarray(x, dtype=np.float64)
    out = forest.predict(x)
    return float(out[0]) if x.ndim == 1 else out


class CartForestRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn wrapper around :func:`fit_forest`.

    Parameters
    ----------
    n_estimators : int, default=30
        Number of trees.
    max_depth : int or None, default=50
        Maximum tree depth; ``None`` grows until leaves are pure or too small.
    min_samples_leaf : int, default=2
        Minimum rows on each side of a split.
    max_features : int or None, default=None
        Features tried per split; ``None`` means ``ceil(n_features / 3)``.
    bootstrap : bool, default=True
        Resample rows with replacement for every tree.
    random_state : int, default=0
        Seed of the per-tree streams. Only integers are accepted so that
        fitted models are reproducible.

    Attributes
    ----------
    forest_ : Forest
        The trained ensemble.
    n_features_in_ : int
        Number of features seen during :meth:`fit`.
    """

    def __init__(self, n_estimators=30, max_depth=50, min_samples_leaf=2,
                 max_features=None, bootstrap=True, random_state=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.random_state = random_state

    def _config(self):
        return ForestConfig(n_trees=self.n_estimators, max_depth=self.max_depth,
                            min_samples_leaf=self.min_samples_leaf,
                            mtry=self.max_features,
                            seed=0 if self.random_state is None else self.random_state,
                            bootstrap=self.bootstrap)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.forest_ = fit_forest(X, y, self._config())
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "forest_")
        X = check_array(X, dtype=np.float64)
        return self.forest_.predict(X)
