"""MAE, R^2 and Spearman rank correlation."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ShapeError

METRICS = ("mae", "r2", "srcc")
LOWER_IS_BETTER = {"mae": True, "r2": False, "srcc": False}


class UndefinedMetricError(ValueError):
    pass


def _pair(preds, targets, min_n=1):
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ShapeError(f"{p.shape[0]} predictions but {t.shape[0]} targets")
    if p.shape[0] < min_n:
        raise ShapeError(f"need at least {min_n} samples, got {p.shape[0]}")
    return p, t


def mae(preds, targets):
    p, t = _pair(preds, targets)
    return float(np.mean(np.abs(p - t)))


def r2(preds, targets):
    p, t = _pair(preds, targets, min_n=2)
    ss_tot = np.sum((t - t.mean()) ** 2)
    if ss_tot == 0:
        raise UndefinedMetricError("R^2 is undefined for constant targets")
    return float(1.0 - np.sum((t - p) ** 2) / ss_tot)


def srcc(preds, targets):
    """Pearson correlation of average ranks (ties share the mean rank)."""
    p, t = _pair(preds, targets, min_n=2)
    rp, rt = rankdata(p, method="average"), rankdata(t, method="average")
    rp -= rp.mean()
    rt -= rt.mean()
    denom = np.sqrt(np.sum(rp * rp) * np.sum(rt * rt))
    if denom == 0:
        raise UndefinedMetricError("Spearman correlation is undefined for a constant vector")
    return float(np.clip(np.sum(rp * rt) / denom, -1.0, 1.0))


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    r2: float
    srcc: float
    n: int

    def to_dict(self):
        return asdict(self)


def compute_metrics(preds, targets) -> MetricsReport:
    """All three metrics; a constant prediction vector gets SRCC 0 (no ranking information)."""
    p, t = _pair(preds, targets, min_n=2)
    try:
        rho = srcc(p, t)
    except UndefinedMetricError:
        if np.ptp(t) == 0:
            raise
        rho = 0.0
    return MetricsReport(mae=mae(p, t), r2=r2(p, t), srcc=rho, n=int(p.shape[0]))
