"""Error metrics reported per target: MAE, RMSE and volatility."""

from dataclasses import dataclass

import numpy as np

__all__ = ["MetricsReport", "mae", "rmse", "vol", "evaluate"]


def _pair(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(
            f"length mismatch: {y_true.shape[0]} true vs {y_pred.shape[0]} predicted")
    if y_true.size == 0:
        raise ValueError("metrics need at least one value")
    return y_true, y_pred


def mae(y_true, y_pred):
    y_true, y_pred = _pair(y_true, y_pred)
    return float(np.mean(np.abs(y_true - y_pred)))


def rmse(y_true, y_pred):
    y_true, y_pred = _pair(y_true, y_pred)
    return float(np.sqrt(np.mean((y_pred - y_true) ** 2)))


def vol(y_true, y_pred):
    """Mean absolute deviation of the errors ``y_true - y_pred`` around their mean."""
    y_true, y_pred = _pair(y_true, y_pred)
    v = y_true - y_pred
    if v.min() == v.max():
        # the summed mean of equal values can be off by one ulp
        return 0.0
    return float(np.mean(np.abs(v - v.mean())))


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    rmse: float
    vol: float


def evaluate(y_true, y_pred):
    return MetricsReport(mae(y_true, y_pred), rmse(y_true, y_pred), vol(y_true, y_pred))
