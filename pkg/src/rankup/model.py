"""Two-headed tanh MLP with hand-written backprop, SGD and EMA weights.

Parameters live in one flat float64 vector; the per-layer weight matrices
are reshaped views into it, so optimizers and EMA operate on the flat
vector directly.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, NonFiniteError, ShapeError

CHECKPOINT_FORMAT_VERSION = 1

_version_counter = itertools.count()


def _layout(sizes):
    """Return [(name, shape)] for trunk layers followed by the two heads."""
    entries = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        entries.append((f"W{k}", (fan_in, fan_out)))
        entries.append((f"b{k}", (fan_out,)))
    width = sizes[-1]
    entries += [
        ("reg_W", (width, 1)),
        ("reg_b", (1,)),
        ("arc_W", (width, 1)),
        ("arc_b", (1,)),
    ]
    return entries


def _views(flat, layout):
    views = {}
    offset = 0
    for name, shape in layout:
        size = int(np.prod(shape))
        views[name] = flat[offset : offset + size].reshape(shape)
        offset += size
    return views


class TwoHeadModel:
    """Shared tanh trunk feeding a regression head and a ranking-score head.

    Parameters
    ----------
    sizes : sequence of int
        ``(n_inputs, hidden_1, ..., hidden_L)``; every hidden layer uses tanh.
    params : ndarray, optional
        Flat parameter vector matching the layout. Zeros if omitted.
    """

    def __init__(self, sizes, params=None):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigError(f"invalid layer sizes {sizes}", field="hidden")
        self.sizes = sizes
        self.layout = _layout(sizes)
        self.n_params = sum(int(np.prod(shape)) for _, shape in self.layout)
        if params is None:
            params = np.zeros(self.n_params)
        params = np.array(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got shape {params.shape}")
        self.params = params
        self._bind_views()
        self.touch()

    def _bind_views(self):
        self.views = _views(self.params, self.layout)

    def touch(self):
        """Mark parameters as changed; caches from earlier forwards become stale."""
        self.version = next(_version_counter)

    @property
    def n_hidden_layers(self):
        return len(self.sizes) - 1

    @property
    def n_inputs(self):
        return self.sizes[0]

    def with_params(self, params) -> "TwoHeadModel":
        return TwoHeadModel(self.sizes, params)

    def copy(self) -> "TwoHeadModel":
        return TwoHeadModel(self.sizes, self.params.copy())

    def predict(self, X):
        reg, _, _ = forward(self, X)
        return reg


def init_model(n_inputs, hidden=(64, 64), seed=0) -> TwoHeadModel:
    """Glorot-uniform weights, zero biases."""
    model = TwoHeadModel((n_inputs, *hidden))
    rng = np.random.default_rng(seed)
    for name, shape in model.layout:
        if len(shape) == 2:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            model.views[name][...] = rng.uniform(-a, a, size=shape)
    model.touch()
    return model


@dataclass
class ForwardCache:
    inputs: np.ndarray
    activations: list
    model_version: int


def forward(m: TwoHeadModel, X):
    """Return ``(reg_out, arc_score, cache)`` for a batch ``X`` of shape (B, d)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != m.n_inputs:
        raise ShapeError(f"model expects {m.n_inputs} features, got input shape {X.shape}")
    v = m.views
    h = X
    acts = []
    for k in range(m.n_hidden_layers):
        h = np.tanh(h @ v[f"W{k}"] + v[f"b{k}"])
        acts.append(h)
    reg = (h @ v["reg_W"])[:, 0] + v["reg_b"][0]
    arc = (h @ v["arc_W"])[:, 0] + v["arc_b"][0]
    return reg, arc, ForwardCache(X, acts, m.version)


def backward(m: TwoHeadModel, cache: ForwardCache, grad_reg_out, grad_arc_score):
    """Gradient of ``sum(grad_reg_out * reg_out + grad_arc_score * arc_score)``
    with respect to the flat parameter vector."""
    if cache.model_version != m.version:
        raise ContractError("forward cache is stale: parameters changed since the forward pass")
    g_reg = np.asarray(grad_reg_out, dtype=np.float64).reshape(-1)
    g_arc = np.asarray(grad_arc_score, dtype=np.float64).reshape(-1)
    B = cache.inputs.shape[0]
    if g_reg.shape != (B,) or g_arc.shape != (B,):
        raise ShapeError(f"upstream gradients must have shape ({B},)")
    v = m.views
    grads = np.zeros(m.n_params)
    g = _views(grads, m.layout)

    h = cache.activations[-1]
    g["reg_W"][:, 0] = h.T @ g_reg
    g["reg_b"][0] = g_reg.sum()
    g["arc_W"][:, 0] = h.T @ g_arc
    g["arc_b"][0] = g_arc.sum()
    dh = np.outer(g_reg, v["reg_W"][:, 0]) + np.outer(g_arc, v["arc_W"][:, 0])
    for k in range(m.n_hidden_layers - 1, -1, -1):
        h = cache.activations[k]
        dz = dh * (1.0 - h * h)
        prev = cache.activations[k - 1] if k > 0 else cache.inputs
        g[f"W{k}"][...] = prev.T @ dz
        g[f"b{k}"][...] = dz.sum(axis=0)
        if k > 0:
            dh = dz @ v[f"W{k}"].T
    return grads


@dataclass
class OptimState:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-3
    velocity: np.ndarray = None

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("must be >= 0", field="learning_rate")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("must lie in [0, 1)", field="momentum")
        if not self.weight_decay >= 0:
            raise ConfigError("must be >= 0", field="weight_decay")


def sgd_step(m: TwoHeadModel, grads, opt: OptimState) -> TwoHeadModel:
    """In-place SGD with momentum and L2 weight decay folded into the gradient.

    ``v <- momentum * v + grads + weight_decay * params``; ``params <- params - lr * v``.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != m.params.shape:
        raise ShapeError(f"gradient shape {grads.shape} != parameter shape {m.params.shape}")
    if not np.all(np.isfinite(grads)):
        bad = np.flatnonzero(~np.isfinite(grads))
        raise NonFiniteError(
            f"non-finite gradient in {bad.size} of {grads.size} entries (first index {bad[0]})"
        )
    if opt.velocity is None:
        opt.velocity = np.zeros_like(m.params)
    elif opt.velocity.shape != m.params.shape:
        raise ShapeError("optimizer velocity does not match parameter layout")
    opt.velocity *= opt.momentum
    opt.velocity += grads + opt.weight_decay * m.params
    m.params -= opt.learning_rate * opt.velocity
    if not np.all(np.isfinite(m.params)):
        raise NonFiniteError("parameters became non-finite after the SGD step")
    m.touch()
    return m


@dataclass
class EmaState:
    decay: float
    shadow: np.ndarray = field(default=None)

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ConfigError("must lie in [0, 1]", field="ema_decay")

    @classmethod
    def from_model(cls, m: TwoHeadModel, decay: float):
        return cls(decay, m.params.copy())


def ema_update(ema: EmaState, m: TwoHeadModel) -> EmaState:
    if ema.shadow is None:
        ema.shadow = m.params.copy()
        return ema
    if ema.shadow.shape != m.params.shape:
        raise ShapeError("EMA shadow does not match parameter layout")
    ema.shadow *= ema.decay
    ema.shadow += (1.0 - ema.decay) * m.params
    return ema


def gradient_check(m: TwoHeadModel, X, loss_fn, eps=1e-5):
    """Compare backprop against central differences over every parameter.

    ``loss_fn(reg_out, arc_score)`` must return ``(loss, grad_reg, grad_arc)``.
    Returns the maximum over parameters of
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)`` where
    ``floor = 1e-3 * max|analytic|`` (at least 1e-12). The floor keeps
    finite-difference rounding noise on parameters whose gradient is exactly
    zero, such as an output bias under a balanced MAE batch, from reading as
    a relative error of 1.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    if m.params.dtype != np.float64:
        raise ContractError("gradient_check requires float64 parameters")
    reg, arc, cache = forward(m, X)
    _, g_reg, g_arc = loss_fn(reg, arc)
    analytic = backward(m, cache, g_reg, g_arc)

    probe = m.copy()
    numeric = np.empty_like(analytic)
    for i in range(m.n_params):
        base = probe.params[i]
        probe.params[i] = base + eps
        probe.touch()
        up = loss_fn(*forward(probe, X)[:2])[0]
        probe.params[i] = base - eps
        probe.touch()
        down = loss_fn(*forward(probe, X)[:2])[0]
        probe.params[i] = base
        numeric[i] = (up - down) / (2.0 * eps)
    floor = max(1e-3 * float(np.max(np.abs(analytic), initial=0.0)), 1e-12)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def save_checkpoint(m: TwoHeadModel, path, **extra):
    """JSON container: layer sizes, layout and the flat parameter vector.

    Floats are written with ``repr`` precision so the round trip is bit-exact.
    """
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "two_head_mlp",
        "sizes": list(m.sizes),
        "layout": [[name, list(shape)] for name, shape in m.layout],
        "params": [float(p) for p in m.params],
    }
    payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> TwoHeadModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(
            f"{path}: unsupported checkpoint format_version {payload.get('format_version')!r}"
        )
    m = TwoHeadModel(payload["sizes"], np.array(payload["params"], dtype=np.float64))
    stored = [[name, list(shape)] for name, shape in m.layout]
    if payload.get("layout", stored) != stored:
        raise ConfigError(f"{path}: layout does not match sizes {payload['sizes']}")
    return m
