"""Feed-forward backbones with explicit forward/backward passes.

Two kinds share one layer stack:

* ``autoencoder``: ``d -> h1 -> ... -> hk -> ... -> h1 -> d``; score is the
  squared reconstruction error ``||x - f(x)||^2``.
* ``dsvdd``: ``d -> h1 -> ... -> hk`` without biases; score is
  ``||phi(x) - c||^2`` for a fixed center ``c``.

Every linear layer except the last is followed by batch norm (optional) and
a leaky ReLU. Bias-free models use non-affine batch norm, since the BN shift
is itself a bias.

Parameters live in one flat float64 vector; ``Model.layout`` maps names to
views into it, which keeps the optimizer and gradient checks trivial.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from aar.errors import InvalidInput
from aar.score_stats import ScoreBatch

AUTOENCODER = "autoencoder"
DSVDD = "dsvdd"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    layer_dims: tuple[int, ...]
    use_bias: bool = True
    batch_norm: bool = True
    leaky_slope: float = 0.01
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in (AUTOENCODER, DSVDD):
            raise InvalidInput(f"unknown model kind {self.kind!r}")
        dims = tuple(int(h) for h in self.layer_dims)
        if not dims or any(h <= 0 for h in dims):
            raise InvalidInput("layer_dims must be a nonempty list of positive widths")
        if self.input_dim <= 0:
            raise InvalidInput("input_dim must be positive")
        object.__setattr__(self, "layer_dims", dims)
        if self.kind == DSVDD and self.use_bias:
            object.__setattr__(self, "use_bias", False)

    @property
    def widths(self) -> list[int]:
        """Activation widths from input to output."""
        h = list(self.layer_dims)
        if self.kind == AUTOENCODER:
            return [self.input_dim] + h + h[-2::-1] + [self.input_dim]
        return [self.input_dim] + h

    @property
    def layer_names(self) -> list[str]:
        n_enc = len(self.layer_dims)
        n_layers = len(self.widths) - 1
        return [f"enc{i}" if i < n_enc else f"dec{i - n_enc}" for i in range(n_layers)]

    @property
    def bn_affine(self) -> bool:
        return self.use_bias


@dataclass
class Model:
    spec: ModelSpec
    params: np.ndarray
    layout: dict[str, tuple[int, tuple[int, ...]]]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    center: Optional[np.ndarray] = None
    seed: int = 0

    def get(self, name: str, params: Optional[np.ndarray] = None) -> np.ndarray:
        offset, shape = self.layout[name]
        flat = self.params if params is None else params
        return flat[offset : offset + int(np.prod(shape))].reshape(shape)

    def has(self, name: str) -> bool:
        return name in self.layout

    @property
    def n_params(self) -> int:
        return self.params.size

    def copy(self) -> "Model":
        return Model(
            spec=self.spec,
            params=self.params.copy(),
            layout=dict(self.layout),
            buffers={k: v.copy() for k, v in self.buffers.items()},
            center=None if self.center is None else self.center.copy(),
            seed=self.seed,
        )


def _build_layout(spec: ModelSpec) -> dict[str, tuple[int, tuple[int, ...]]]:
    layout: dict[str, tuple[int, tuple[int, ...]]] = {}
    offset = 0

    def add(name: str, shape: tuple[int, ...]) -> None:
        nonlocal offset
        layout[name] = (offset, shape)
        offset += int(np.prod(shape))

    widths = spec.widths
    names = spec.layer_names
    last = len(names) - 1
    for i, name in enumerate(names):
        fan_in, fan_out = widths[i], widths[i + 1]
        add(f"{name}.W", (fan_in, fan_out))
        if spec.use_bias:
            add(f"{name}.b", (fan_out,))
        if spec.batch_norm and i < last and spec.bn_affine:
            add(f"{name}.gamma", (fan_out,))
            add(f"{name}.beta", (fan_out,))
    return layout


def init_model(spec: ModelSpec, seed: int) -> Model:
    """Uniform ``+-sqrt(1/fan_in)`` weights and biases; BN scale 1, shift 0."""
    layout = _build_layout(spec)
    total = sum(int(np.prod(shape)) for _, shape in layout.values())
    params = np.zeros(total)
    model = Model(spec=spec, params=params, layout=layout, seed=seed)
    rng = np.random.default_rng(seed)
    widths = spec.widths
    for i, name in enumerate(spec.layer_names):
        bound = np.sqrt(1.0 / widths[i])
        W = model.get(f"{name}.W")
        W[...] = rng.uniform(-bound, bound, size=W.shape)
        if spec.use_bias:
            b = model.get(f"{name}.b")
            b[...] = rng.uniform(-bound, bound, size=b.shape)
        if model.has(f"{name}.gamma"):
            model.get(f"{name}.gamma")[...] = 1.0
    reset_running_stats(model)
    return model


def reset_running_stats(model: Model) -> None:
    spec = model.spec
    if not spec.batch_norm:
        return
    widths = spec.widths
    for i, name in enumerate(spec.layer_names[:-1]):
        model.buffers[f"{name}.running_mean"] = np.zeros(widths[i + 1])
        model.buffers[f"{name}.running_var"] = np.ones(widths[i + 1])


# ---------------------------------------------------------------- forward/backward


def forward(
    model: Model,
    X: np.ndarray,
    *,
    train: bool,
    update_stats: bool = False,
    params: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, list[dict]]:
    """Run the layer stack. ``train`` selects batch vs running BN statistics."""
    spec = model.spec
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise InvalidInput(f"expected input of shape (n, {spec.input_dim}), got {X.shape}")
    names = spec.layer_names
    last = len(names) - 1
    h = X
    caches: list[dict] = []
    for i, name in enumerate(names):
        cache: dict = {"a": h}
        z = h @ model.get(f"{name}.W", params)
        if spec.use_bias:
            z = z + model.get(f"{name}.b", params)
        if i < last:
            if spec.batch_norm:
                if train:
                    mean = z.mean(axis=0)
                    var = z.var(axis=0)
                    if update_stats:
                        n = z.shape[0]
                        unbiased = var * n / (n - 1) if n > 1 else var
                        m = spec.bn_momentum
                        rm = model.buffers[f"{name}.running_mean"]
                        rv = model.buffers[f"{name}.running_var"]
                        rm[...] = (1 - m) * rm + m * mean
                        rv[...] = (1 - m) * rv + m * unbiased
                else:
                    mean = model.buffers[f"{name}.running_mean"]
                    var = model.buffers[f"{name}.running_var"]
                inv_std = 1.0 / np.sqrt(var + spec.bn_eps)
                xhat = (z - mean) * inv_std
                cache.update(xhat=xhat, inv_std=inv_std, bn_train=train)
                if spec.bn_affine:
                    z = xhat * model.get(f"{name}.gamma", params) + model.get(f"{name}.beta", params)
                else:
                    z = xhat
            cache["pre_act"] = z
            h = np.where(z > 0, z, spec.leaky_slope * z)
        else:
            h = z
        caches.append(cache)
    return h, caches


def backward(model: Model, caches: list[dict], d_out: np.ndarray, params=None) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the flat parameter vector, given dLoss/dOutput."""
    spec = model.spec
    grad = np.zeros_like(model.params)

    def gslot(name: str) -> np.ndarray:
        offset, shape = model.layout[name]
        return grad[offset : offset + int(np.prod(shape))].reshape(shape)

    names = spec.layer_names
    last = len(names) - 1
    g = d_out
    for i in range(last, -1, -1):
        name, cache = names[i], caches[i]
        if i < last:
            z = cache["pre_act"]
            g = np.where(z > 0, g, spec.leaky_slope * g)
            if spec.batch_norm:
                xhat = cache["xhat"]
                if spec.bn_affine:
                    gslot(f"{name}.gamma")[...] = (g * xhat).sum(axis=0)
                    gslot(f"{name}.beta")[...] = g.sum(axis=0)
                    g = g * model.get(f"{name}.gamma", params)
                inv_std = cache["inv_std"]
                if cache["bn_train"]:
                    n = g.shape[0]
                    g = (inv_std / n) * (
                        n * g - g.sum(axis=0) - xhat * (g * xhat).sum(axis=0)
                    )
                else:
                    g = g * inv_std
        if spec.use_bias:
            gslot(f"{name}.b")[...] = g.sum(axis=0)
        gslot(f"{name}.W")[...] = cache["a"].T @ g
        g = g @ model.get(f"{name}.W", params).T
    return grad


# ---------------------------------------------------------------- scores and losses


def _raw_scores(model: Model, out: np.ndarray, X: np.ndarray) -> np.ndarray:
    if model.spec.kind == AUTOENCODER:
        return ((X - out) ** 2).sum(axis=1)
    if model.center is None:
        raise InvalidInput("DSVDD center is not initialized")
    return ((out - model.center) ** 2).sum(axis=1)


def score_matrix(model: Model, X: np.ndarray, *, train: bool = False) -> np.ndarray:
    """Per-sample anomaly scores as a plain array."""
    X = np.asarray(X, dtype=np.float64)
    out, _ = forward(model, X, train=train)
    return _raw_scores(model, out, X)


def anomaly_scores(model: Model, X: np.ndarray, *, train: bool = False) -> ScoreBatch:
    """Scores in evaluation mode (running BN statistics) unless ``train`` is set."""
    return ScoreBatch(score_matrix(model, X, train=train))


def pseudo_huber(sq_residual: np.ndarray, delta: float) -> np.ndarray:
    """``delta^2 (sqrt(1 + r^2/delta^2) - 1)`` evaluated from ``r^2``."""
    return delta**2 * (np.sqrt(1.0 + sq_residual / delta**2) - 1.0)


def huber_scores(model: Model, X: np.ndarray, delta: float, *, train: bool = False) -> ScoreBatch:
    """Pseudo-Huber of the per-sample L2 residual norm."""
    if delta <= 0:
        raise InvalidInput("delta must be > 0")
    return ScoreBatch(pseudo_huber(score_matrix(model, X, train=train), delta))


def loss_and_grad(
    model: Model,
    X: np.ndarray,
    weights: np.ndarray,
    *,
    loss: str = "sse",
    delta: float = 1.0,
    train: bool = True,
    update_stats: bool = False,
    params: Optional[np.ndarray] = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted loss ``(1/N) sum w_i l_i``, its parameter gradient, and the raw scores.

    ``l_i`` is the raw score (``loss="sse"``) or its pseudo-Huber transform.
    Weights are constants: no gradient flows through the thresholds.
    """
    X = np.asarray(X, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size != X.shape[0]:
        raise InvalidInput(f"weights length {w.size} != batch size {X.shape[0]}")
    n = X.shape[0]
    out, caches = forward(model, X, train=train, update_stats=update_stats, params=params)
    s = _raw_scores(model, out, X)
    if loss == "sse":
        per_sample = s
        dl_ds = np.ones_like(s)
    elif loss == "huber":
        per_sample = pseudo_huber(s, delta)
        dl_ds = 0.5 / np.sqrt(1.0 + s / delta**2)
    else:
        raise InvalidInput(f"unknown loss {loss!r}")
    value = float(np.dot(w, per_sample) / n)
    coef = (w * dl_ds * (2.0 / n))[:, None]
    if model.spec.kind == AUTOENCODER:
        d_out = coef * (out - X)
    else:
        d_out = coef * (out - model.center)
    return value, backward(model, caches, d_out, params), s


def weighted_grad(model: Model, X: np.ndarray, weights: np.ndarray, **kwargs) -> np.ndarray:
    """Exact gradient of the weighted training loss (train-mode BN, stats untouched)."""
    _, grad, _ = loss_and_grad(model, X, weights, **kwargs)
    return grad


def init_dsvdd_center(model: Model, data: np.ndarray, eps: float = 0.1) -> Model:
    """Set the center to the mean embedding of ``data`` (evaluation mode).

    Coordinates closer to zero than ``eps`` are pushed to ``+-eps``, keeping
    their sign (exact zeros go to ``+eps``).
    """
    if model.spec.kind != DSVDD:
        raise InvalidInput("center initialization applies to DSVDD models only")
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise InvalidInput("center initialization needs a nonempty data matrix")
    emb, _ = forward(model, data, train=False)
    c = emb.mean(axis=0)
    small = np.abs(c) < eps
    c[small] = np.where(c[small] < 0, -eps, eps)
    model.center = c
    return model


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: Model, path, opt_state=None) -> None:
    """Write spec, parameters, buffers, center and optimizer state as JSON."""
    payload = {
        "format": "aar-checkpoint",
        "version": CHECKPOINT_VERSION,
        "spec": asdict(model.spec),
        "seed": model.seed,
        "params": model.params.tolist(),
        "buffers": {k: v.tolist() for k, v in model.buffers.items()},
        "center": None if model.center is None else model.center.tolist(),
        "optimizer": None if opt_state is None else opt_state.to_dict(),
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(model, opt_state or None)``."""
    from aar.nn.optim import AdamState

    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "aar-checkpoint" or payload.get("version") != CHECKPOINT_VERSION:
        raise InvalidInput(f"{path} is not a version {CHECKPOINT_VERSION} checkpoint")
    spec_fields = payload["spec"]
    spec_fields["layer_dims"] = tuple(spec_fields["layer_dims"])
    spec = ModelSpec(**spec_fields)
    model = Model(
        spec=spec,
        params=np.asarray(payload["params"], dtype=np.float64),
        layout=_build_layout(spec),
        buffers={k: np.asarray(v, dtype=np.float64) for k, v in payload["buffers"].items()},
        center=None if payload["center"] is None else np.asarray(payload["center"]),
        seed=payload["seed"],
    )
    opt = payload.get("optimizer")
    return model, (None if opt is None else AdamState.from_dict(opt))
