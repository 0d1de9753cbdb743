"""Regression, pairwise ranking and combined RankUp objectives.

Every loss returns its value together with the exact gradient with respect
to the model outputs it consumes, so the trainer only has to hand those
gradients to :func:`rankup.model.backward`.

Pairwise losses are averaged over all N*N ordered pairs of a batch,
including the diagonal. The ranking classifier turns two scores into a
two-class softmax over the logits ``(r_j - r_i, r_i - r_j)``; class 1 means
"i ranks above j", so its probability is ``sigmoid(2 * (r_i - r_j))``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ShapeError

PROB_FLOOR = 1e-12
_LOG_LO = np.log(PROB_FLOOR)
_LOG_HI = np.log1p(-PROB_FLOOR)
# below this |logit| neither clamp can bind (the floor binds near |z| = 27.6)
_SATURATION = 27.0


@dataclass(frozen=True)
class ArcLossConfig:
    tau: float = 0.95
    omega_ulb: float = 1.0

    def __post_init__(self):
        if not 0.5 < self.tau <= 1.0:
            raise ConfigError(f"must lie in (0.5, 1], got {self.tau}", field="tau")
        if not self.omega_ulb >= 0:
            raise ConfigError(f"must be >= 0, got {self.omega_ulb}", field="omega_ulb")


def regression_loss(preds, targets, kind="mae"):
    """Mean absolute or mean squared error and its gradient w.r.t. ``preds``."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.ndim != 1:
        raise ShapeError(f"preds {preds.shape} and targets {targets.shape} must be equal-length vectors")
    n = preds.shape[0]
    if n < 1:
        raise ShapeError("regression_loss needs at least one prediction")
    diff = preds - targets
    if kind == "mae":
        return float(np.mean(np.abs(diff))), np.sign(diff) / n
    if kind == "mse":
        return float(np.mean(diff * diff)), 2.0 * diff / n
    raise ConfigError(f"unknown regression loss {kind!r}", field="criterion")


def ranknet_pair_prob(s_i, s_j):
    """Probability that item i outranks item j, ``sigmoid(s_i - s_j)``."""
    return expit(np.subtract(s_i, s_j))


def _binary_ce(logits, targets):
    """Clamped binary cross-entropy of ``sigmoid(logits)`` against soft targets.

    Returns the elementwise loss and its derivative w.r.t. the logits. Log
    probabilities come from a stable softplus and are clamped to
    [log 1e-12, log(1 - 1e-12)]; a clamped term contributes no gradient.
    """
    z = logits
    a = np.abs(z)
    # -log(1 - p) = softplus(z) = max(z, 0) + log1p(exp(-|z|))
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-a))
    p = 0.5 + 0.5 * np.tanh(0.5 * z)
    if a.size and a.max() > _SATURATION:
        log_q = -softplus
        log_p = log_q + z
        live_p = (log_p > _LOG_LO) & (log_p < _LOG_HI)
        live_q = (log_q > _LOG_LO) & (log_q < _LOG_HI)
        log_p = np.clip(log_p, _LOG_LO, _LOG_HI)
        log_q = np.clip(log_q, _LOG_LO, _LOG_HI)
        loss = -targets * log_p - (1.0 - targets) * log_q
        # d log p / dz = 1 - p ; d log(1-p) / dz = -p
        dlogit = -targets * np.where(live_p, 1.0 - p, 0.0) + (1.0 - targets) * np.where(live_q, p, 0.0)
        return loss, dlogit
    # -t log p - (1 - t) log(1 - p) = softplus(z) - t z
    return softplus - targets * z, p - targets


def _pairwise_grad(dloss_ddiff):
    """Scatter dL/d(s_i - s_j) onto the per-item scores.

    Diagonal pairs are dropped explicitly: ``s_i - s_i`` is identically zero.
    """
    g = dloss_ddiff.copy()
    np.fill_diagonal(g, 0.0)
    return g.sum(axis=1) - g.sum(axis=0)


def pairwise_targets(labels):
    """RankNet targets: 1 if y_i > y_j, 0 if y_i < y_j, 0.5 on ties (and the diagonal)."""
    y = np.asarray(labels, dtype=np.float64)
    return 0.5 * (1.0 + np.sign(y[:, None] - y[None, :]))


def ranknet_loss(scores, targets_pairwise):
    """RankNet loss averaged over all ordered pairs.

    ``targets_pairwise`` is either an (N, N) array of targets in {0, 0.5, 1}
    or a callable ``(i, j) -> target``.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    N = s.shape[0]
    if N < 1:
        raise ShapeError("ranknet_loss needs at least one score")
    if callable(targets_pairwise):
        Y = np.array([[targets_pairwise(i, j) for j in range(N)] for i in range(N)], dtype=np.float64)
    else:
        Y = np.asarray(targets_pairwise, dtype=np.float64)
    if Y.shape != (N, N):
        raise ShapeError(f"pairwise targets must have shape ({N}, {N}), got {Y.shape}")
    D = s[:, None] - s[None, :]
    loss, dD = _binary_ce(D, Y)
    scale = 1.0 / (N * N)
    return float(loss.sum() * scale), _pairwise_grad(dD) * scale


def arc_pair_softmax(r_i, r_j):
    """Two-class probabilities ``[P(j ranks above or ties i), P(i ranks above j)]``.

    Softmax over logits ``(r_j - r_i, r_i - r_j)``; the trailing axis holds the classes.
    """
    d = np.subtract(r_i, r_j)
    p1 = expit(2.0 * d)
    return np.stack([expit(-2.0 * d), p1], axis=-1)


def arc_labeled_loss(arc_scores, labels):
    """Cross-entropy of the pairwise softmax against hard targets ``1{y_i > y_j}``.

    Ties and the diagonal take class 0.
    """
    r = np.asarray(arc_scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if r.shape != y.shape:
        raise ShapeError(f"{r.shape[0]} scores but {y.shape[0]} labels")
    N = r.shape[0]
    if N < 1:
        raise ShapeError("arc_labeled_loss needs at least one sample")
    C = (y[:, None] > y[None, :]).astype(np.float64)
    Z = 2.0 * (r[:, None] - r[None, :])
    loss, dZ = _binary_ce(Z, C)
    scale = 1.0 / (N * N)
    return float(loss.sum() * scale), _pairwise_grad(2.0 * dZ) * scale


def fixmatch_pair_mask(weak_scores, tau):
    """Confident-pair mask and hard pseudo-classes from weak-view scores.

    A pair passes when its larger class probability strictly exceeds ``tau``.
    The pseudo-class is the argmax (class 0 on an exact tie).
    """
    w = np.asarray(weak_scores, dtype=np.float64).reshape(-1)
    Dw = w[:, None] - w[None, :]
    # max class probability = sigmoid(2|d|) = (1 + tanh|d|) / 2
    confidence = 0.5 + 0.5 * np.tanh(np.abs(Dw))
    mask = confidence > tau
    pseudo = (Dw > 0).astype(np.float64)
    return mask, pseudo


def arc_unlabeled_fixmatch_loss(weak_scores, strong_scores, cfg: ArcLossConfig):
    """FixMatch consistency on ranking pairs.

    Returns ``(loss, grad w.r.t. strong_scores, mask_rate)``. Weak scores only
    produce pseudo-labels and receive no gradient. The sum over confident
    pairs is divided by N^2, masked pairs included.
    """
    w = np.asarray(weak_scores, dtype=np.float64).reshape(-1)
    s = np.asarray(strong_scores, dtype=np.float64).reshape(-1)
    if w.shape != s.shape:
        raise ShapeError(f"{w.shape[0]} weak scores but {s.shape[0]} strong scores")
    N = s.shape[0]
    if N == 0:
        return 0.0, np.zeros(0), 0.0
    mask, pseudo = fixmatch_pair_mask(w, cfg.tau)
    Zs = 2.0 * (s[:, None] - s[None, :])
    loss, dZ = _binary_ce(Zs, pseudo)
    scale = 1.0 / (N * N)
    keep = mask.astype(np.float64)
    return (
        float((loss * keep).sum() * scale),
        _pairwise_grad(2.0 * dZ * keep) * scale,
        float(keep.sum() * scale),
    )


def warmup_factor(iteration, alpha_warm):
    """Linear ramp ``min(iteration / alpha_warm, 1)``."""
    if not alpha_warm >= 1:
        raise ConfigError(f"alpha_warm must be >= 1, got {alpha_warm}", field="alpha_warm")
    return min(iteration / alpha_warm, 1.0)


def rankup_total_loss(l_reg, l_rda, l_arc, omega_rda, omega_arc, iteration, alpha_warm):
    if omega_rda < 0 or omega_arc < 0:
        raise ConfigError("loss weights must be >= 0")
    return l_reg + omega_rda * warmup_factor(iteration, alpha_warm) * l_rda + omega_arc * l_arc
