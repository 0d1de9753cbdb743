"""Self-checks behind ``rankup check``.

Gradient checks compose each loss with a small random model and compare
backpropagation against central finite differences. Oracle checks compare
the vectorized pairwise losses with plain double loops. Nothing here is
used during training.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import AugmentConfig, augment
from .losses import (
    PROB_FLOOR,
    ArcLossConfig,
    arc_labeled_loss,
    arc_unlabeled_fixmatch_loss,
    pairwise_targets,
    ranknet_loss,
    regression_loss,
)
from .model import forward, gradient_check, init_model
from .rda import PseudoLabelTable, RdaConfig, maybe_refresh, rda_batch_loss, table_update

GRAD_TOL = 1e-4
ORACLE_TOL = 1e-10


@dataclass(frozen=True)
class CheckResult:
    name: str
    worst: float
    tol: float
    n: int

    @property
    def passed(self):
        return self.worst < self.tol

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: worst {self.worst:.3e} over {self.n} cases (tol {self.tol:g})"


def _problem(seed, n_inputs=3, hidden=(5, 4), n=4):
    rng = np.random.default_rng(seed)
    m = init_model(n_inputs, hidden, seed=seed)
    # spread the weights a little so the tanh units are not all near-linear
    m.params[:] += rng.normal(scale=0.3, size=m.n_params)
    m.touch()
    return m, rng.normal(size=(n, n_inputs)), rng.normal(size=n), rng


def _reg_only(fn):
    def loss_fn(reg, arc):
        loss, g = fn(reg)
        return loss, g, np.zeros_like(arc)

    return loss_fn


def _arc_only(fn):
    def loss_fn(reg, arc):
        loss, g = fn(arc)
        return loss, np.zeros_like(reg), g

    return loss_fn


def composite_loss_fn(y, n_lb, table, ids, cfg, omega_arc=0.2, warm=0.5):
    """Full RankUp objective on stacked inputs ``[labeled; weak unlabeled; strong unlabeled]``."""
    n_u = len(ids)

    def loss_fn(reg, arc):
        reg_l, reg_w = reg[:n_lb], reg[n_lb : n_lb + n_u]
        arc_l, arc_w, arc_s = arc[:n_lb], arc[n_lb : n_lb + n_u], arc[n_lb + n_u :]
        l_reg, g_reg = regression_loss(reg_l, y)
        l_lb, g_lb = arc_labeled_loss(arc_l, y)
        l_ulb, g_s, _ = arc_unlabeled_fixmatch_loss(arc_w, arc_s, cfg)
        l_rda, g_rda, _ = rda_batch_loss(table, ids, reg_w)
        loss = l_reg + warm * l_rda + omega_arc * (l_lb + cfg.omega_ulb * l_ulb)
        g_r = np.concatenate([g_reg, warm * g_rda, np.zeros(n_u)])
        # weak scores only pick pseudo-labels, so they receive no gradient
        g_a = np.concatenate([omega_arc * g_lb, np.zeros(n_u), omega_arc * cfg.omega_ulb * g_s])
        return loss, g_r, g_a

    return loss_fn


def gradient_checks(n_cases=20, eps=1e-5):
    """Worst relative error per loss over ``n_cases`` random models and batches."""
    worst = {k: 0.0 for k in ("mae", "ranknet", "arc_labeled", "arc_fixmatch", "rda", "composite")}
    for seed in range(n_cases):
        m, X, y, rng = _problem(seed)
        T = pairwise_targets(np.round(y))
        w = rng.normal(scale=2.0, size=X.shape[0])
        cfg = ArcLossConfig(tau=0.7)
        tbl = PseudoLabelTable(np.arange(X.shape[0]))
        table_update(tbl, tbl.ids, rng.normal(size=X.shape[0]))
        maybe_refresh(tbl, y, 0, RdaConfig())
        fns = {
            "mae": _reg_only(lambda r: regression_loss(r, y)),
            "ranknet": _arc_only(lambda a: ranknet_loss(a, T)),
            "arc_labeled": _arc_only(lambda a: arc_labeled_loss(a, y)),
            "arc_fixmatch": _arc_only(lambda a: arc_unlabeled_fixmatch_loss(w, a, cfg)[:2]),
            "rda": _reg_only(lambda r: rda_batch_loss(tbl, tbl.ids, r)[:2]),
        }
        for name, fn in fns.items():
            worst[name] = max(worst[name], gradient_check(m, X, fn, eps=eps))

        xs = augment(X, "strong", AugmentConfig(), rng)
        stacked = np.vstack([X[:2], X, xs])
        y2 = y[:2] + np.array([0.0, 0.5])
        # freeze weak-view scores from the unperturbed model so masks stay fixed
        fn = composite_loss_fn(y2, 2, tbl, tbl.ids, cfg)
        _, arc0, _ = forward(m, stacked)
        w0 = arc0[2 : 2 + X.shape[0]].copy()

        def frozen(reg, arc, fn=fn, w0=w0):
            arc = arc.copy()
            arc[2 : 2 + len(w0)] = w0
            return fn(reg, arc)

        worst["composite"] = max(worst["composite"], gradient_check(m, stacked, frozen, eps=eps))
    return [CheckResult(f"gradient/{k}", v, GRAD_TOL, n_cases) for k, v in worst.items()]


def _clamp(p):
    return min(max(p, PROB_FLOOR), 1.0 - PROB_FLOOR)


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def _loop_ranknet(s, T):
    n = len(s)
    total = 0.0
    for i in range(n):
        for j in range(n):
            d = s[i] - s[j]
            total -= T[i][j] * math.log(_clamp(_sig(d))) + (1 - T[i][j]) * math.log(_clamp(_sig(-d)))
    return total / n**2


def _loop_arc(r, y):
    n = len(r)
    total = 0.0
    for i in range(n):
        for j in range(n):
            d = 2 * (r[i] - r[j])
            total -= math.log(_clamp(_sig(d) if y[i] > y[j] else _sig(-d)))
    return total / n**2


def _loop_fixmatch(w, s, tau):
    n = len(w)
    total = 0.0
    for i in range(n):
        for j in range(n):
            dw, ds = 2 * (w[i] - w[j]), 2 * (s[i] - s[j])
            if max(_sig(dw), _sig(-dw)) > tau:
                total -= math.log(_clamp(_sig(ds) if dw > 0 else _sig(-ds)))
    return total / n**2


def oracle_checks(n_cases=200, seed=0):
    rng = np.random.default_rng(seed)
    worst = {"ranknet": 0.0, "arc_labeled": 0.0, "arc_fixmatch": 0.0}
    for _ in range(n_cases):
        n = int(rng.integers(1, 7))
        s, w = rng.normal(scale=3, size=n), rng.normal(scale=3, size=n)
        # few distinct labels so ties are common
        y = rng.integers(0, 3, n).astype(float)
        tau = float(rng.choice([0.6, 0.7, 0.95]))
        T = pairwise_targets(y)
        worst["ranknet"] = max(worst["ranknet"], abs(ranknet_loss(s, T)[0] - _loop_ranknet(s, T)))
        worst["arc_labeled"] = max(worst["arc_labeled"], abs(arc_labeled_loss(s, y)[0] - _loop_arc(s, y)))
        got = arc_unlabeled_fixmatch_loss(w, s, ArcLossConfig(tau=tau))[0]
        worst["arc_fixmatch"] = max(worst["arc_fixmatch"], abs(got - _loop_fixmatch(w, s, tau)))
    return [CheckResult(f"oracle/{k}", v, ORACLE_TOL, n_cases) for k, v in worst.items()]


def run_all():
    return gradient_checks() + oracle_checks()
