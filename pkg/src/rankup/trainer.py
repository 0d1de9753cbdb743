"""Training loops for RankUp and the baseline methods, plus the seed protocol.

Each run owns independent random streams spawned from its seed: one for
initialization, one for the labeled batch (sampling and augmentation), one
for the unlabeled batch and one for mixup. Methods that add unlabeled terms
therefore consume exactly the same labeled stream as the supervised
baseline.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .data import AugmentConfig, Dataset, LabeledSet, UnlabeledSet, augment, fit_scaler
from .errors import ConfigError, NonFiniteError, ShapeError
from .losses import (
    ArcLossConfig,
    arc_labeled_loss,
    arc_unlabeled_fixmatch_loss,
    regression_loss,
    warmup_factor,
)
from .metrics import METRICS, MetricsReport, compute_metrics
from .model import EmaState, OptimState, TwoHeadModel, backward, ema_update, forward, init_model, sgd_step
from .rda import PseudoLabelTable, RdaConfig, maybe_refresh, rda_batch_loss, table_update

log = logging.getLogger(__name__)

METHODS = (
    "supervised",
    "fully_supervised",
    "pi_model",
    "mean_teacher",
    "mixmatch_reg",
    "rankup",
    "rankup_rda",
)
SEMI_SUPERVISED = ("pi_model", "mean_teacher", "mixmatch_reg", "rankup", "rankup_rda")

DEFAULT_UNLABELED_RATIO = {
    "supervised": 0.0,
    "fully_supervised": 0.0,
    "pi_model": 1.0,
    "mean_teacher": 1.0,
    "mixmatch_reg": 1.0,
    "rankup": 7.0,
    "rankup_rda": 7.0,
}

MIXMATCH_AUGMENTATIONS = 2


@dataclass
class TrainConfig:
    method: str = "rankup"
    total_iters: int = 20_000
    eval_every: int = 1_000
    labeled_batch: int = 32
    # None selects the per-method default
    unlabeled_batch_ratio: float = None
    hidden: tuple = (64, 64)
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-3
    criterion: str = "mae"
    ema_decay: float = 0.999
    eval_ema: bool = False
    # ranking classifier
    tau: float = 0.95
    omega_ulb: float = 1.0
    omega_arc: float = 0.2
    # accepted for completeness; hard pseudo-labels leave no place to apply it
    temperature: float = 0.5
    # distribution alignment
    refresh_period: int = 1024
    omega_rda: float = 1.0
    rda_warmup: float = 0.4
    # consistency baselines (pi-model, mean teacher, mixmatch)
    consistency_weight: float = 0.1
    consistency_warmup: float = 0.4
    mixup_alpha: float = 0.5
    # augmentation
    weak_noise_sigma: float = 0.02
    strong_noise_sigma: float = 0.1
    strong_mask_prob: float = 0.2
    augment_labeled: bool = True
    seeds: tuple = (0, 1, 2)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.validate()

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}", field="method")
        _check(self.total_iters >= 1 and int(self.total_iters) == self.total_iters, "total_iters", "must be an integer >= 1")
        _check(self.eval_every >= 1, "eval_every", "must be >= 1")
        _check(self.labeled_batch >= 1, "labeled_batch", "must be >= 1")
        if self.unlabeled_batch_ratio is not None:
            _check(self.unlabeled_batch_ratio >= 0, "unlabeled_batch_ratio", "must be >= 0")
        _check(len(self.hidden) >= 1 and min(self.hidden) >= 1, "hidden", "needs at least one positive layer width")
        _check(self.criterion in ("mae", "mse"), "criterion", "must be 'mae' or 'mse'")
        _check(0.0 <= self.ema_decay <= 1.0, "ema_decay", "must lie in [0, 1]")
        _check(self.omega_arc >= 0, "omega_arc", "must be >= 0")
        _check(self.temperature > 0, "temperature", "must be > 0")
        _check(0.0 <= self.rda_warmup <= 1.0, "rda_warmup", "must lie in [0, 1]")
        _check(self.consistency_weight >= 0, "consistency_weight", "must be >= 0")
        _check(0.0 <= self.consistency_warmup <= 1.0, "consistency_warmup", "must lie in [0, 1]")
        _check(self.mixup_alpha > 0, "mixup_alpha", "must be > 0")
        _check(len(self.seeds) >= 1, "seeds", "needs at least one seed")
        OptimState(self.learning_rate, self.momentum, self.weight_decay)
        self.arc_config
        self.rda_config
        self.augment_config

    @property
    def n_unlabeled_batch(self):
        ratio = self.unlabeled_batch_ratio
        if ratio is None:
            ratio = DEFAULT_UNLABELED_RATIO[self.method]
        return int(round(ratio * self.labeled_batch))

    @property
    def arc_config(self):
        return ArcLossConfig(self.tau, self.omega_ulb)

    @property
    def rda_config(self):
        return RdaConfig(self.refresh_period, self.omega_rda, _warm_iters(self.rda_warmup, self.total_iters))

    @property
    def consistency_alpha_warm(self):
        return _warm_iters(self.consistency_warmup, self.total_iters)

    @property
    def augment_config(self):
        return AugmentConfig(self.weak_noise_sigma, self.strong_noise_sigma, self.strong_mask_prob)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _check(ok, name, message):
    if not ok:
        raise ConfigError(message, field=name)


def _warm_iters(fraction, total_iters):
    # warm-up lengths are given as a fraction of training; the ramp needs >= 1 iteration
    return max(1.0, fraction * total_iters)


@dataclass
class RunRecord:
    method: str
    seed: int
    logs: list
    evals: list
    final: MetricsReport
    model: TwoHeadModel
    scaler: object
    table: PseudoLabelTable = None
    ema: EmaState = None

    def summary(self):
        return {
            "format_version": 1,
            "kind": "run",
            "method": self.method,
            "seed": self.seed,
            "iterations": len(self.logs),
            "final": self.final.to_dict(),
            "evals": self.evals,
            "scaler": {"y_min": self.scaler.y_min, "y_max": self.scaler.y_max},
        }


def evaluate(model: TwoHeadModel, test: Dataset, scaler) -> MetricsReport:
    """Metrics of denormalized, unaugmented predictions on ``test``."""
    if test.n_samples == 0:
        raise ConfigError("test set is empty", field="test")
    if test.n_features != model.n_inputs:
        raise ShapeError(f"model expects {model.n_inputs} features, test set has {test.n_features}")
    preds = scaler.denormalize(model.predict(test.features))
    return compute_metrics(preds, test.targets)


class _Run:
    """Mutable state of one training run."""

    def __init__(self, cfg: TrainConfig, labeled: LabeledSet, unlabeled: UnlabeledSet, seed: int):
        self.cfg = cfg
        self.method = cfg.method
        init_ss, lab_ss, unl_ss, mix_ss = np.random.SeedSequence(seed).spawn(4)
        self.lab_rng = np.random.default_rng(lab_ss)
        self.unl_rng = np.random.default_rng(unl_ss)
        self.mix_rng = np.random.default_rng(mix_ss)

        if self.method == "fully_supervised":
            X = np.vstack([labeled.features, unlabeled.features])
            y = np.concatenate([labeled.targets, unlabeled.reveal_targets()])
        else:
            X, y = labeled.features, labeled.targets
        self.scaler = fit_scaler(y)
        self.X_lab = X
        self.y_lab = self.scaler.normalize(y)
        self.X_unl = unlabeled.features
        self.unl_ids = unlabeled.ids

        self.n_ulb = cfg.n_unlabeled_batch if self.method in SEMI_SUPERVISED else 0
        if self.n_ulb > 0 and len(unlabeled) == 0:
            raise ConfigError("semi-supervised methods need unlabeled data", field="unlabeled")
        self.model = init_model(X.shape[1], cfg.hidden, seed=init_ss)
        self.opt = OptimState(cfg.learning_rate, cfg.momentum, cfg.weight_decay)
        self.ema = EmaState.from_model(self.model, cfg.ema_decay)
        self.aug = cfg.augment_config
        self.arc = cfg.arc_config
        self.rda = cfg.rda_config
        self.table = None
        if self.method == "rankup_rda":
            self.table = PseudoLabelTable(self.unl_ids)
            # one full pass so aligned targets exist from the first iteration
            table_update(self.table, self.unl_ids, self.model.predict(self.X_unl))
            maybe_refresh(self.table, self.y_lab, 0, self.rda)

    # -- batches -----------------------------------------------------------

    def labeled_batch(self):
        rows = self.lab_rng.integers(0, self.X_lab.shape[0], self.cfg.labeled_batch)
        x = self.X_lab[rows]
        if self.cfg.augment_labeled:
            x = augment(x, "weak", self.aug, self.lab_rng)
        return x, self.y_lab[rows]

    def unlabeled_rows(self):
        return self.unl_rng.integers(0, self.X_unl.shape[0], self.n_ulb)

    # -- per-method steps: each returns (flat gradient, log dict) ----------

    def _supervised_part(self, x, y):
        reg, _, cache = forward(self.model, x)
        l_reg, g_reg = regression_loss(reg, y, self.cfg.criterion)
        return l_reg, g_reg, cache

    def step_supervised(self, it):
        x, y = self.labeled_batch()
        l_reg, g_reg, cache = self._supervised_part(x, y)
        grads = backward(self.model, cache, g_reg, np.zeros_like(g_reg))
        return grads, {"loss": l_reg, "l_reg": l_reg}

    step_fully_supervised = step_supervised

    def _consistency(self, it, teacher):
        x, y = self.labeled_batch()
        l_reg, g_reg, cache = self._supervised_part(x, y)
        grads = backward(self.model, cache, g_reg, np.zeros_like(g_reg))
        xu = self.X_unl[self.unlabeled_rows()]
        xa = augment(xu, "weak", self.aug, self.unl_rng)
        xb = augment(xu, "weak", self.aug, self.unl_rng)
        reg_a, _, cache_a = forward(self.model, xa)
        reg_b = teacher.predict(xb)
        l_cons, g_cons = regression_loss(reg_a, reg_b, "mse")
        w = self.cfg.consistency_weight * warmup_factor(it, self.cfg.consistency_alpha_warm)
        grads += backward(self.model, cache_a, w * g_cons, np.zeros_like(g_cons))
        return grads, {"loss": l_reg + w * l_cons, "l_reg": l_reg, "l_cons": l_cons, "cons_weight": w}

    def step_pi_model(self, it):
        return self._consistency(it, self.model)

    def step_mean_teacher(self, it):
        return self._consistency(it, self.model.with_params(self.ema.shadow))

    def step_mixmatch_reg(self, it):
        x, y = self.labeled_batch()
        xu = self.X_unl[self.unlabeled_rows()]
        views = [augment(xu, "weak", self.aug, self.unl_rng) for _ in range(MIXMATCH_AUGMENTATIONS)]
        guess = np.mean([self.model.predict(v) for v in views], axis=0)
        xu_all = np.vstack(views)
        yu_all = np.tile(guess, MIXMATCH_AUGMENTATIONS)

        W_x = np.vstack([x, xu_all])
        W_y = np.concatenate([y, yu_all])
        perm = self.mix_rng.permutation(W_x.shape[0])
        lam = self.mix_rng.beta(self.cfg.mixup_alpha, self.cfg.mixup_alpha)
        lam = max(lam, 1.0 - lam)
        n_l = x.shape[0]
        mx = lam * W_x + (1.0 - lam) * W_x[perm]
        my = lam * W_y + (1.0 - lam) * W_y[perm]

        reg_l, _, cache_l = forward(self.model, mx[:n_l])
        l_reg, g_reg = regression_loss(reg_l, my[:n_l], self.cfg.criterion)
        reg_u, _, cache_u = forward(self.model, mx[n_l:])
        l_cons, g_cons = regression_loss(reg_u, my[n_l:], "mse")
        w = self.cfg.consistency_weight * warmup_factor(it, self.cfg.consistency_alpha_warm)
        grads = backward(self.model, cache_l, g_reg, np.zeros_like(g_reg))
        grads += backward(self.model, cache_u, w * g_cons, np.zeros_like(g_cons))
        return grads, {"loss": l_reg + w * l_cons, "l_reg": l_reg, "l_cons": l_cons, "cons_weight": w, "mixup_lambda": lam}

    def step_rankup(self, it):
        cfg = self.cfg
        x, y = self.labeled_batch()
        reg_l, arc_l, cache_l = forward(self.model, x)
        l_reg, g_reg = regression_loss(reg_l, y, cfg.criterion)
        l_lb, g_lb = arc_labeled_loss(arc_l, y)

        rows = self.unlabeled_rows()
        xu = self.X_unl[rows]
        xw = augment(xu, "weak", self.aug, self.unl_rng)
        xs = augment(xu, "strong", self.aug, self.unl_rng)
        reg_w, arc_w, cache_w = forward(self.model, xw)
        _, arc_s, cache_s = forward(self.model, xs)
        l_ulb, g_s, mask_rate = arc_unlabeled_fixmatch_loss(arc_w, arc_s, self.arc)
        l_arc = l_lb + self.arc.omega_ulb * l_ulb

        grads = backward(self.model, cache_l, g_reg, cfg.omega_arc * g_lb)
        grads += backward(self.model, cache_s, np.zeros_like(g_s), cfg.omega_arc * self.arc.omega_ulb * g_s)
        logs = {"l_reg": l_reg, "l_arc_lb": l_lb, "l_arc_ulb": l_ulb, "mask_rate": mask_rate}
        loss = l_reg + cfg.omega_arc * l_arc

        if self.table is not None:
            ids = self.unl_ids[rows]
            table_update(self.table, ids, reg_w)
            maybe_refresh(self.table, self.y_lab, it, self.rda)
            l_rda, g_rda, _ = rda_batch_loss(self.table, ids, reg_w, cfg.criterion)
            wf = warmup_factor(it, self.rda.alpha_warm)
            w = self.rda.omega_rda * wf
            if w > 0:
                grads += backward(self.model, cache_w, w * g_rda, np.zeros_like(g_rda))
            loss += w * l_rda
            logs.update(l_rda=l_rda, rda_warmup=wf)
        logs["loss"] = loss
        return grads, logs

    step_rankup_rda = step_rankup


def train(cfg: TrainConfig, data, seed: int, callback=None) -> RunRecord:
    """Train one model.

    Parameters
    ----------
    cfg : TrainConfig
    data : tuple
        ``(labeled, unlabeled, test)``.
    seed : int
        Seeds initialization, batch sampling and augmentation.
    callback : callable, optional
        ``callback(iteration, model)`` after every optimizer step.
    """
    cfg.validate()
    labeled, unlabeled, test = data
    run = _Run(cfg, labeled, unlabeled, seed)
    step = getattr(run, f"step_{cfg.method}")
    logs, evals = [], []
    for it in range(1, cfg.total_iters + 1):
        try:
            grads, entry = step(it)
            if not np.isfinite(entry["loss"]):
                raise NonFiniteError(f"loss is {entry['loss']}")
            sgd_step(run.model, grads, run.opt)
        except NonFiniteError as exc:
            raise NonFiniteError(f"{cfg.method} (seed {seed}) diverged at iteration {it}: {exc}") from exc
        ema_update(run.ema, run.model)
        entry = {"iter": it, **{k: float(v) for k, v in entry.items()}}
        logs.append(entry)
        if callback is not None:
            callback(it, run.model)
        if it % cfg.eval_every == 0 or it == cfg.total_iters:
            report = evaluate(_eval_model(run, cfg), test, run.scaler)
            evals.append({"iter": it, **report.to_dict()})
            log.debug("%s seed=%d iter=%d mae=%.4f", cfg.method, seed, it, report.mae)
    final = MetricsReport(**{k: v for k, v in evals[-1].items() if k != "iter"})
    return RunRecord(cfg.method, seed, logs, evals, final, run.model, run.scaler, run.table, run.ema)


def _eval_model(run, cfg):
    if cfg.eval_ema or cfg.method == "mean_teacher":
        return run.model.with_params(run.ema.shadow)
    return run.model


@dataclass
class ProtocolReport:
    method: str
    seeds: list
    per_seed: list
    mean: dict
    std: dict
    records: list = field(default=None, repr=False)

    def summary(self):
        return {
            "format_version": 1,
            "kind": "protocol",
            "method": self.method,
            "seeds": list(self.seeds),
            "per_seed": self.per_seed,
            "mean": self.mean,
            "std": self.std,
        }


class ProtocolError(RuntimeError):
    """A seed run failed; ``partial`` holds the runs that completed."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


def aggregate(per_seed):
    """Mean and population standard deviation of each metric over seeds."""
    mean, std = {}, {}
    for name in METRICS:
        values = np.array([r[name] for r in per_seed], dtype=np.float64)
        mean[name] = float(values.mean())
        std[name] = float(values.std(ddof=0))
    return mean, std


def run_protocol(cfg: TrainConfig, data_spec, on_record=None) -> ProtocolReport:
    """Train once per seed in ``cfg.seeds`` and aggregate the final metrics.

    The seed selects the labeled subset as well as the training randomness;
    the train/test split is fixed by ``data_spec``.
    """
    from .data import build_splits

    records = []
    for seed in cfg.seeds:
        try:
            data = build_splits(data_spec, seed)
            rec = train(cfg, data, seed)
        except Exception as exc:
            raise ProtocolError(f"{cfg.method} failed for seed {seed}: {exc}", records) from exc
        records.append(rec)
        if on_record is not None:
            on_record(rec)
    per_seed = [{"seed": r.seed, **r.final.to_dict()} for r in records]
    mean, std = aggregate(per_seed)
    return ProtocolReport(cfg.method, list(cfg.seeds), per_seed, mean, std, records)
