"""Per-mini-batch sample weights: AAR and the threshold baselines.

AAR assigns, for each sample score ``s_i`` in a mini-batch,

* during warm-up (``epoch <= E``): ``0`` if ``s_i > tau_N`` else ``1``;
* afterwards: ``0`` if ``s_i > tau_N``, ``t_s`` if ``tau < s_i <= tau_N``,
  else ``1``, with ``tau = max(tau_sigma, tau_I)`` from a two-component GMM
  fitted to the batch scores.

Baselines replace ``tau_N`` by their own cut and have no soft band.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from aar import score_stats
from aar.errors import DegenerateInput, InvalidInput, NumericalFailure
from aar.gmm import GmmConfig, ThresholdSet, fit_gmm2, intersection_threshold, z_sigma_threshold
from aar.score_stats import ScoresLike, as_scores

logger = logging.getLogger(__name__)


class Method(str, Enum):
    AAR = "aar"
    MZ = "mz"
    QUANTILE = "quantile"
    IQR = "iqr"
    NONE = "none"


@dataclass(frozen=True)
class RejectionPolicy:
    """Hyperparameters driving weight assignment.

    ``gamma`` is the assumed contamination ratio for ``Method.QUANTILE``:
    scores above the ``1 - gamma`` batch quantile get weight 0.
    """

    method: Method = Method.AAR
    warmup_epochs: int = 15
    z: float = 2.5
    soft_weight: float = 0.1
    gamma: Optional[float] = None
    gmm: GmmConfig = field(default_factory=GmmConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        if not 0.0 <= self.soft_weight <= 1.0:
            raise InvalidInput("soft_weight must lie in [0, 1]")
        if self.warmup_epochs < 0:
            raise InvalidInput("warmup_epochs must be >= 0")
        if self.z <= 0:
            raise InvalidInput("z must be > 0")
        if self.method is Method.QUANTILE:
            if self.gamma is None or not 0.0 <= self.gamma <= 1.0:
                raise InvalidInput("quantile rejection needs gamma in [0, 1]")


@dataclass
class WeightResult:
    weights: np.ndarray
    thresholds: ThresholdSet
    gmm_fallback: bool = False

    @property
    def hard_rejected(self) -> int:
        return int(np.count_nonzero(self.weights == 0.0))

    @property
    def soft_rejected(self) -> int:
        return int(np.count_nonzero((self.weights > 0.0) & (self.weights < 1.0)))

    def __iter__(self):
        # allows ``weights, thresholds = assign_weights(...)``
        yield self.weights
        yield self.thresholds


def _hard_cut(batch: np.ndarray, policy: RejectionPolicy) -> float:
    if policy.method in (Method.AAR, Method.MZ):
        return score_stats.normality_threshold(batch)
    if policy.method is Method.QUANTILE:
        return score_stats.quantile_threshold(batch, 1.0 - policy.gamma)
    if policy.method is Method.IQR:
        if batch.size < 2:
            return float("inf")
        return score_stats.iqr_threshold(batch)
    return float("inf")


def assign_weights(
    batch: ScoresLike, epoch: int, policy: RejectionPolicy, seed: int = 0
) -> WeightResult:
    """Weights for one mini-batch at a 1-based ``epoch``.

    If the mixture fit fails after warm-up (degenerate scores, EM blow-up),
    the batch falls back to hard rejection only and ``gmm_fallback`` is set.
    """
    if epoch < 1:
        raise InvalidInput("epoch is 1-based")
    s = as_scores(batch)
    tau_n = _hard_cut(s, policy)
    weights = np.where(s > tau_n, 0.0, 1.0)

    if policy.method is not Method.AAR or epoch <= policy.warmup_epochs:
        return WeightResult(weights, ThresholdSet(tau_n=tau_n))

    try:
        fit = fit_gmm2(s, policy.gmm, seed=seed)
    except (DegenerateInput, NumericalFailure) as exc:
        logger.debug("GMM fit failed (%s); hard rejection only for this batch", exc)
        return WeightResult(weights, ThresholdSet(tau_n=tau_n), gmm_fallback=True)

    tau_i = intersection_threshold(fit)
    tau_sigma = z_sigma_threshold(fit, policy.z)
    tau = tau_sigma if tau_i is None else max(tau_sigma, tau_i)
    soft = (s > tau) & (s <= tau_n)
    weights = np.where(soft, policy.soft_weight, weights)
    return WeightResult(weights, ThresholdSet(tau_n=tau_n, tau_i=tau_i, tau_sigma=tau_sigma, tau=tau))


def weights_from_thresholds(
    batch: ScoresLike, tau_n: float, tau: Optional[float], soft_weight: float
) -> np.ndarray:
    """Case analysis of the AAR weight rule for given thresholds."""
    s = as_scores(batch)
    w = np.where(s > tau_n, 0.0, 1.0)
    if tau is not None:
        w = np.where((s > tau) & (s <= tau_n), soft_weight, w)
    return w


def weighted_loss(batch: ScoresLike, weights) -> float:
    """``(1/N) * sum(w_i * s_i)`` with ``N`` the full batch size."""
    s = as_scores(batch)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.shape != s.shape:
        raise InvalidInput(f"weights length {w.size} != batch length {s.size}")
    return float(np.dot(w, s) / s.size)
