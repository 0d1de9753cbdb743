"""Regression distribution alignment of pseudo-labels.

The labeled targets are sorted and linearly resampled to as many points as
there are unlabeled instances. Pseudo-labels are then replaced rank by rank:
the t-th smallest prediction receives the t-th smallest resampled label.
Alignment runs over a cached table of predictions and is refreshed only
every ``refresh_period`` iterations.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InsufficientLabelsError, NonFiniteError, ShapeError
from .losses import regression_loss


@dataclass(frozen=True)
class RdaConfig:
    refresh_period: int = 1024
    omega_rda: float = 1.0
    alpha_warm: float = 1.0

    def __post_init__(self):
        if int(self.refresh_period) != self.refresh_period or self.refresh_period < 1:
            raise ConfigError(f"must be an integer >= 1, got {self.refresh_period}", field="refresh_period")
        if not self.omega_rda >= 0:
            raise ConfigError(f"must be >= 0, got {self.omega_rda}", field="omega_rda")
        if not self.alpha_warm >= 1:
            raise ConfigError(f"must be >= 1, got {self.alpha_warm}", field="alpha_warm")


@dataclass(frozen=True)
class LabeledDistribution:
    sorted_values: np.ndarray

    def __len__(self):
        return self.sorted_values.shape[0]


def interpolate_labeled_distribution(labeled_labels, m: int) -> LabeledDistribution:
    """Resample the sorted labeled targets to ``m`` points.

    Positions form an endpoint-anchored uniform grid over ``[0, k-1]``, so the
    first and last outputs are the labeled minimum and maximum. ``m == 1``
    yields the lower median.
    """
    v = np.sort(np.asarray(labeled_labels, dtype=np.float64).reshape(-1))
    k = v.shape[0]
    if k < 2:
        raise InsufficientLabelsError(f"need at least 2 labeled targets, got {k}")
    if m < 1:
        raise ConfigError(f"m must be >= 1, got {m}", field="m")
    if m == 1:
        return LabeledDistribution(v[(k - 1) // 2 : (k - 1) // 2 + 1].copy())
    positions = np.arange(m) * (k - 1) / (m - 1)
    out = np.interp(positions, np.arange(k, dtype=np.float64), v)
    # np.interp is exact at knots; pin the endpoints anyway.
    out[0], out[-1] = v[0], v[-1]
    return LabeledDistribution(out)


def _rank_order(x, descending):
    idx = np.arange(x.shape[0])
    if descending:
        # exact reverse of the stable ascending order
        return np.lexsort((-idx, -x))
    return np.argsort(x, kind="stable")


def align(pseudo_labels, dist: LabeledDistribution, descending=False):
    """Replace each pseudo-label with the distribution value of the same rank.

    Ties among pseudo-labels are broken by original index. Sorting both
    sequences descending gives the identical per-index result.
    """
    p = np.asarray(pseudo_labels, dtype=np.float64).reshape(-1)
    values = dist.sorted_values
    if p.shape != values.shape:
        raise ShapeError(f"{p.shape[0]} pseudo-labels but distribution has {values.shape[0]} values")
    order = _rank_order(p, descending)
    out = np.empty_like(p)
    out[order] = values[::-1] if descending else values
    return out


@dataclass
class PseudoLabelTable:
    """Per-unlabeled-instance raw predictions and their last aligned targets.

    ``ids`` are the dataset ids of the unlabeled pool; rows follow that order.
    ``align_calls`` counts refreshes.
    """

    ids: np.ndarray
    raw: np.ndarray = None
    aligned: np.ndarray = None
    initialized: bool = False
    last_refresh_iter: int = -1
    align_calls: int = 0
    _row: dict = field(default=None, repr=False)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        n = self.ids.shape[0]
        if self.raw is None:
            self.raw = np.zeros(n)
        if self.aligned is None:
            self.aligned = np.zeros(n)
        self._row = {int(i): r for r, i in enumerate(self.ids)}

    def __len__(self):
        return self.ids.shape[0]

    def rows(self, ids):
        try:
            return np.fromiter((self._row[int(i)] for i in ids), dtype=np.int64)
        except KeyError as exc:
            raise IndexError(f"unknown unlabeled id {exc.args[0]}") from None

    def to_dict(self, iteration=None):
        return {
            "format_version": 1,
            "iter": self.last_refresh_iter if iteration is None else int(iteration),
            "last_refresh_iter": self.last_refresh_iter,
            "initialized": self.initialized,
            "ids": self.ids.tolist(),
            "raw": self.raw.tolist(),
            "aligned": self.aligned.tolist(),
        }


def table_update(tbl: PseudoLabelTable, ids, preds) -> PseudoLabelTable:
    """Overwrite the raw predictions for ``ids``; later duplicates win."""
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    ids = np.asarray(ids).reshape(-1)
    if ids.shape != preds.shape:
        raise ShapeError(f"{ids.shape[0]} ids but {preds.shape[0]} predictions")
    if ids.size == 0:
        return tbl
    if not np.all(np.isfinite(preds)):
        bad = ids[~np.isfinite(preds)]
        raise NonFiniteError(f"non-finite pseudo-label prediction for unlabeled ids {bad.tolist()[:5]}")
    tbl.raw[tbl.rows(ids)] = preds
    return tbl


def maybe_refresh(tbl: PseudoLabelTable, labeled_labels, iteration, cfg: RdaConfig) -> PseudoLabelTable:
    """Re-align the whole table when ``iteration % refresh_period == 0`` or it was never aligned."""
    if tbl.initialized and iteration % cfg.refresh_period != 0:
        return tbl
    dist = interpolate_labeled_distribution(labeled_labels, len(tbl))
    tbl.aligned = align(tbl.raw, dist)
    tbl.initialized = True
    tbl.last_refresh_iter = int(iteration)
    tbl.align_calls += 1
    return tbl


def rda_batch_loss(tbl: PseudoLabelTable, ids, reg_preds, kind="mae"):
    """Regression loss against the aligned targets of ``ids``.

    Returns ``(loss, grad w.r.t. reg_preds, ready)``; before the first refresh
    the loss is zero and ``ready`` is False.
    """
    reg_preds = np.asarray(reg_preds, dtype=np.float64).reshape(-1)
    if not tbl.initialized:
        return 0.0, np.zeros_like(reg_preds), False
    targets = tbl.aligned[tbl.rows(ids)]
    loss, grad = regression_loss(reg_preds, targets, kind)
    return loss, grad, True
