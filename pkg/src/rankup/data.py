"""Datasets, labeled/unlabeled splits, label scaling and vector augmentations.

Everything here is deterministic given explicit seeds or an explicit
``numpy.random.Generator``; no function touches global random state.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateScaleError, IngestionError, ShapeError

SYNTHETIC_TASKS = ("sine", "polynomial", "friedman")


def _as_features(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"features must be 2-d, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with raw-unit scalar targets and stable integer ids."""

    features: np.ndarray
    targets: np.ndarray
    ids: np.ndarray = None

    def __post_init__(self):
        x = _as_features(self.features)
        y = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        n = x.shape[0]
        if n < 1:
            raise ConfigError("dataset must contain at least one sample")
        if y.shape[0] != n:
            raise ShapeError(f"{n} feature rows but {y.shape[0]} targets")
        ids = np.arange(n) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (n,):
            raise ShapeError(f"ids must have shape ({n},), got {ids.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ConfigError("dataset contains non-finite values")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "ids", ids)

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.targets[rows], self.ids[rows])


# A held-out evaluation set is an ordinary dataset.
TestSet = Dataset


@dataclass(frozen=True)
class LabeledSet:
    features: np.ndarray
    targets: np.ndarray
    ids: np.ndarray

    def __len__(self):
        return self.features.shape[0]


class UnlabeledSet:
    """Unlabeled pool.

    True targets are kept for fully-supervised reference runs but are only
    reachable through :meth:`reveal_targets`, which counts every access so
    tests can assert that semi-supervised trainers never read them.
    """

    def __init__(self, features, ids, targets):
        self.features = np.asarray(features, dtype=np.float64)
        self.ids = np.asarray(ids, dtype=np.int64)
        self._targets = np.asarray(targets, dtype=np.float64)
        self.target_reads = 0

    def __len__(self):
        return self.features.shape[0]

    def reveal_targets(self):
        self.target_reads += 1
        return self._targets.copy()


@dataclass(frozen=True)
class SplitSpec:
    n_labeled: int
    seed: int = 0


@dataclass(frozen=True)
class LabelScaler:
    """Min-max scaler mapping the fitting targets onto [0, 1]."""

    y_min: float
    y_max: float

    def __post_init__(self):
        if not self.y_max > self.y_min:
            raise DegenerateScaleError(
                f"y_max ({self.y_max}) must exceed y_min ({self.y_min})"
            )

    @property
    def span(self):
        return self.y_max - self.y_min

    def normalize(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_min) / self.span

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * self.span + self.y_min


@dataclass(frozen=True)
class AugmentConfig:
    weak_noise_sigma: float = 0.02
    strong_noise_sigma: float = 0.1
    strong_mask_prob: float = 0.2

    def __post_init__(self):
        validate_augment_config(self)


def validate_augment_config(cfg: AugmentConfig):
    if not cfg.weak_noise_sigma >= 0:
        raise ConfigError("must be >= 0", field="weak_noise_sigma")
    if not cfg.strong_noise_sigma >= cfg.weak_noise_sigma:
        raise ConfigError("must be >= weak_noise_sigma", field="strong_noise_sigma")
    if not 0.0 <= cfg.strong_mask_prob <= 1.0:
        raise ConfigError("must lie in [0, 1]", field="strong_mask_prob")


def _sine(u):
    return np.sin(3.0 * np.pi * u[:, 0])


def _polynomial(u):
    x1, x2 = u[:, 0], u[:, 1]
    return x1**3 - 2.0 * x1 * x2 + 0.5 * x2**2


def _friedman(u):
    # Friedman #1 on the unit cube; the last five inputs are pure noise.
    return (
        10.0 * np.sin(np.pi * u[:, 0] * u[:, 1])
        + 20.0 * (u[:, 2] - 0.5) ** 2
        + 10.0 * u[:, 3]
        + 5.0 * u[:, 4]
    )


# name -> (n_features, input sampler range, response)
_TASKS = {
    "sine": (1, (-1.0, 1.0), _sine),
    "polynomial": (2, (-1.0, 1.0), _polynomial),
    "friedman": (10, (0.0, 1.0), _friedman),
}


def generate_synthetic(task_name: str, n_samples: int, noise_sigma: float, seed: int) -> Dataset:
    """Sample a synthetic regression task.

    Inputs are drawn first (``rng.uniform`` over the task's input box, shape
    ``(n_samples, d)``), then the additive Gaussian label noise. Features are
    reported in [-1, 1]^d; friedman inputs live on [0, 1]^d and are mapped
    with ``2u - 1`` after the response is computed.
    """
    if task_name not in _TASKS:
        raise ConfigError(
            f"unknown task {task_name!r}; expected one of {', '.join(SYNTHETIC_TASKS)}",
            field="task",
        )
    if n_samples < 2:
        raise ConfigError(f"n_samples must be >= 2, got {n_samples}", field="n_samples")
    if not noise_sigma >= 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}", field="noise_sigma")
    d, (lo, hi), response = _TASKS[task_name]
    rng = np.random.default_rng(seed)
    u = rng.uniform(lo, hi, size=(n_samples, d))
    y = response(u) + noise_sigma * rng.standard_normal(n_samples)
    x = u if (lo, hi) == (-1.0, 1.0) else 2.0 * (u - lo) / (hi - lo) - 1.0
    return Dataset(x, y)


def load_csv(path, target_column: str) -> Dataset:
    """Read a header-first numeric CSV; every other column becomes a feature."""
    if not os.path.isfile(path):
        raise IngestionError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if target_column not in header:
            raise IngestionError(f"column {target_column} not found in {path}")
        t = header.index(target_column)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}"
                )
            values = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise IngestionError(
                        f"{path}: row {lineno}, column {col}: non-numeric or non-finite cell {cell!r}"
                    )
                values.append(v)
            rows.append(values)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    y = table[:, t]
    x = np.delete(table, t, axis=1)
    return Dataset(x, y)


def train_test_split(d: Dataset, test_fraction: float = 0.2, seed: int = 0):
    """Random train/test split; ids are kept from the parent dataset."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("must lie in (0, 1)", field="test_fraction")
    n_test = int(round(test_fraction * d.n_samples))
    if n_test < 1 or n_test >= d.n_samples:
        raise ConfigError(
            f"test_fraction {test_fraction} leaves an empty side for n={d.n_samples}",
            field="test_fraction",
        )
    perm = np.random.default_rng(seed).permutation(d.n_samples)
    return d.subset(np.sort(perm[n_test:])), d.subset(np.sort(perm[:n_test]))


def split_labeled(d: Dataset, s: SplitSpec):
    """Randomly mark ``s.n_labeled`` samples as labeled; the rest are unlabeled."""
    if not 1 <= s.n_labeled < d.n_samples:
        raise ConfigError(
            f"n_labeled must satisfy 1 <= n_labeled < n_samples ({d.n_samples}), got {s.n_labeled}",
            field="n_labeled",
        )
    perm = np.random.default_rng(s.seed).permutation(d.n_samples)
    lab = np.sort(perm[: s.n_labeled])
    unl = np.sort(perm[s.n_labeled :])
    labeled = LabeledSet(d.features[lab], d.targets[lab], d.ids[lab])
    unlabeled = UnlabeledSet(d.features[unl], d.ids[unl], d.targets[unl])
    return labeled, unlabeled


def fit_scaler(labeled) -> LabelScaler:
    y = np.asarray(getattr(labeled, "targets", labeled), dtype=np.float64)
    lo, hi = float(np.min(y)), float(np.max(y))
    if not hi > lo:
        raise DegenerateScaleError(f"cannot scale constant targets (all equal to {lo})")
    return LabelScaler(lo, hi)


def augment(x, kind: str, cfg: AugmentConfig, rng: np.random.Generator):
    """Perturb a feature vector (or a batch of them, row-wise).

    ``weak`` adds N(0, weak_noise_sigma^2) noise. ``strong`` adds
    N(0, strong_noise_sigma^2) noise and then zeroes each feature
    independently with probability ``strong_mask_prob``.
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == "weak":
        return x + cfg.weak_noise_sigma * rng.standard_normal(x.shape)
    if kind == "strong":
        noisy = x + cfg.strong_noise_sigma * rng.standard_normal(x.shape)
        keep = rng.random(x.shape) >= cfg.strong_mask_prob
        return np.where(keep, noisy, 0.0)
    raise ConfigError(f"unknown augmentation kind {kind!r}", field="kind")


@dataclass(frozen=True)
class DataSpec:
    """Where the data comes from and how it is split.

    ``source`` is ``"synthetic"`` (uses ``task``, ``n_samples``,
    ``noise_sigma``, ``data_seed``) or ``"csv"`` (uses ``path`` and
    ``target_column``). The train/test split is drawn once from
    ``data_seed``; the labeled subset is drawn per run seed.
    """

    n_labeled: int
    source: str = "synthetic"
    task: str = "sine"
    n_samples: int = 5000
    noise_sigma: float = 0.1
    data_seed: int = 0
    path: str = None
    target_column: str = None
    test_fraction: float = 0.2

    def validate(self):
        """Check the fields without touching any data."""
        if self.source == "synthetic":
            if self.task not in _TASKS:
                raise ConfigError(f"unknown task {self.task!r}; expected one of {', '.join(SYNTHETIC_TASKS)}", field="task")
            if self.n_samples < 2:
                raise ConfigError("must be >= 2", field="n_samples")
            if not self.noise_sigma >= 0:
                raise ConfigError("must be >= 0", field="noise_sigma")
        elif self.source == "csv":
            if not self.path or not self.target_column:
                raise ConfigError("csv source needs path and target_column", field="path")
        else:
            raise ConfigError(f"unknown data source {self.source!r}", field="source")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("must lie in (0, 1)", field="test_fraction")
        if self.n_labeled < 1:
            raise ConfigError("must be >= 1", field="n_labeled")
        return self

    def load(self) -> Dataset:
        if self.source == "synthetic":
            return generate_synthetic(self.task, self.n_samples, self.noise_sigma, self.data_seed)
        if self.source == "csv":
            if not self.path or not self.target_column:
                raise ConfigError("csv source needs path and target_column", field="path")
            return load_csv(self.path, self.target_column)
        raise ConfigError(f"unknown data source {self.source!r}", field="source")


def build_splits(spec: DataSpec, seed: int):
    """Return ``(labeled, unlabeled, test)`` for one run seed."""
    train, test = train_test_split(spec.load(), spec.test_fraction, spec.data_seed)
    labeled, unlabeled = split_labeled(train, SplitSpec(spec.n_labeled, seed))
    return labeled, unlabeled, test
