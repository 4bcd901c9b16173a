"""Mini-batch training with per-batch sample weights."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from aar.errors import InvalidInput
from aar.nn.model import (
    AUTOENCODER,
    DSVDD,
    Model,
    ModelSpec,
    init_dsvdd_center,
    init_model,
    loss_and_grad,
    score_matrix,
)
from aar.nn.optim import AdamState, adam_update
from aar.policy import Method, RejectionPolicy, assign_weights

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Run-level knobs.

    ``dsvdd_pretrain_epochs`` > 0 pretrains a bias-free autoencoder with the
    same encoder and copies its encoder into the DSVDD network before the
    center is set; 0 sets the center from the freshly initialized network.
    """

    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-4
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: str = "sse"
    huber_delta: float = 1.0
    seed: int = 0
    dsvdd_pretrain_epochs: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise InvalidInput("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidInput("batch_size must be >= 1")
        if self.loss not in ("sse", "huber"):
            raise InvalidInput(f"unknown loss {self.loss!r}")
        if self.huber_delta <= 0:
            raise InvalidInput("huber_delta must be > 0")


@dataclass
class TrainHistory:
    """Per-epoch traces. Threshold traces are batch means (NaN when never computed)."""

    loss: list[float] = field(default_factory=list)
    hard_rejected: list[int] = field(default_factory=list)
    soft_rejected: list[int] = field(default_factory=list)
    gmm_fallbacks: list[int] = field(default_factory=list)
    tau_n: list[float] = field(default_factory=list)
    tau_i: list[float] = field(default_factory=list)
    tau_sigma: list[float] = field(default_factory=list)
    tau: list[float] = field(default_factory=list)
    # weight each training row received in the final epoch
    final_weights: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.loss)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["final_weights"] = None if self.final_weights is None else self.final_weights.tolist()
        return d


def _mean_or_nan(values: list) -> float:
    vals = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(vals)) if vals else float("nan")


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches. A trailing batch of one sample is dropped (batch norm needs two)."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        if idx.size < 2 and n >= 2:
            continue
        yield idx


def _pretrain_encoder(spec: ModelSpec, X: np.ndarray, cfg: TrainConfig, model: Model) -> None:
    ae_spec = ModelSpec(
        kind=AUTOENCODER,
        input_dim=spec.input_dim,
        layer_dims=spec.layer_dims,
        use_bias=False,
        batch_norm=spec.batch_norm,
        leaky_slope=spec.leaky_slope,
        bn_eps=spec.bn_eps,
        bn_momentum=spec.bn_momentum,
    )
    ae_cfg = TrainConfig(**{**asdict(cfg), "epochs": cfg.dsvdd_pretrain_epochs, "dsvdd_pretrain_epochs": 0})
    ae, _ = train(ae_spec, X, RejectionPolicy(method=Method.NONE), ae_cfg)
    for name in spec.layer_names:
        model.get(f"{name}.W")[...] = ae.get(f"{name}.W")
        if spec.batch_norm and f"{name}.running_mean" in model.buffers:
            model.buffers[f"{name}.running_mean"][...] = ae.buffers[f"{name}.running_mean"]
            model.buffers[f"{name}.running_var"][...] = ae.buffers[f"{name}.running_var"]


def train(
    spec: ModelSpec,
    train_data: np.ndarray,
    policy: RejectionPolicy,
    cfg: TrainConfig,
) -> tuple[Model, TrainHistory]:
    """Train a model on ``train_data`` under a rejection policy.

    Each mini-batch: train-mode forward pass gives the scores, the policy
    assigns weights from them, and one Adam step descends the weighted loss.
    """
    X = np.asarray(train_data, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInput("training data must be a nonempty 2-D matrix")
    if cfg.batch_size > X.shape[0]:
        raise InvalidInput(f"batch size {cfg.batch_size} exceeds {X.shape[0]} training rows")

    model = init_model(spec, cfg.seed)
    if spec.kind == DSVDD:
        if cfg.dsvdd_pretrain_epochs > 0:
            _pretrain_encoder(spec, X, cfg, model)
        init_dsvdd_center(model, X)

    opt = AdamState.for_params(
        model.params,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.adam_eps,
    )
    rng = np.random.default_rng(cfg.seed + 1)
    history = TrainHistory()
    final_weights = np.ones(X.shape[0])

    for epoch in range(1, cfg.epochs + 1):
        losses, n_hard, n_soft, n_fallback = [], 0, 0, 0
        traces: dict[str, list] = {"tau_n": [], "tau_i": [], "tau_sigma": [], "tau": []}
        for b, idx in enumerate(iterate_batches(X.shape[0], cfg.batch_size, rng)):
            xb = X[idx]
            # train-mode scores: the same values the weighted loss sees
            scores = score_matrix(model, xb, train=True)
            result = assign_weights(scores, epoch, policy, seed=cfg.seed + b)
            value, grad, _ = loss_and_grad(
                model,
                xb,
                result.weights,
                loss=cfg.loss,
                delta=cfg.huber_delta,
                update_stats=True,
            )
            adam_update(model.params, grad, opt)
            losses.append(value)
            n_hard += result.hard_rejected
            n_soft += result.soft_rejected
            n_fallback += int(result.gmm_fallback)
            for key in traces:
                traces[key].append(getattr(result.thresholds, key))
            if epoch == cfg.epochs:
                final_weights[idx] = result.weights
        history.loss.append(float(np.mean(losses)))
        history.hard_rejected.append(n_hard)
        history.soft_rejected.append(n_soft)
        history.gmm_fallbacks.append(n_fallback)
        for key, vals in traces.items():
            getattr(history, key).append(_mean_or_nan(vals))
    history.final_weights = final_weights
    return model, history
