"""Robust order statistics over anomaly scores.

Everything here is a pure function of a 1-D score vector: the median / MAD
summary, modified z-scores, the MZ normality threshold, and the two
fixed-rule baselines (IQR fence and fixed-quantile cut).

Quantiles use linear interpolation between order statistics (numpy's
``method="linear"``, Hyndman-Fan type 7).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from aar.errors import DegenerateSpread, InvalidInput

MZ_CONSISTENCY = 0.6745
MZ_CUTOFF = 3.5
IQR_FENCE = 1.5


@dataclass(frozen=True)
class ScoreBatch:
    """Anomaly scores for one mini-batch, with optional ground-truth labels.

    Labels are for evaluation only; nothing on the training path reads them.
    """

    scores: np.ndarray
    labels: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64).ravel()
        if scores.size == 0:
            raise InvalidInput("score batch is empty")
        if not np.all(np.isfinite(scores)):
            raise InvalidInput("score batch contains non-finite values")
        if np.any(scores < 0):
            raise InvalidInput("anomaly scores must be nonnegative")
        object.__setattr__(self, "scores", scores)
        if self.labels is not None:
            labels = np.asarray(self.labels).ravel()
            if labels.shape != scores.shape:
                raise InvalidInput(
                    f"labels length {labels.size} != scores length {scores.size}"
                )
            if not np.all(np.isin(labels, (0, 1))):
                raise InvalidInput("labels must be 0 (normal) or 1 (anomaly)")
            object.__setattr__(self, "labels", labels.astype(np.int64))

    def __len__(self) -> int:
        return self.scores.size


@dataclass(frozen=True)
class RobustSummary:
    median: float
    mad: float


ScoresLike = Union[ScoreBatch, np.ndarray, "list[float]"]


def as_scores(batch: ScoresLike) -> np.ndarray:
    """Return a validated 1-D float64 view of ``batch``."""
    if isinstance(batch, ScoreBatch):
        return batch.scores
    scores = np.asarray(batch, dtype=np.float64).ravel()
    if scores.size == 0:
        raise InvalidInput("score batch is empty")
    if not np.all(np.isfinite(scores)):
        raise InvalidInput("score batch contains non-finite values")
    return scores


def median_mad(batch: ScoresLike) -> RobustSummary:
    """Sample median and median absolute deviation from it.

    Even-length batches take the mean of the two central order statistics.
    """
    s = as_scores(batch)
    med = float(np.median(s))
    mad = float(np.median(np.abs(s - med)))
    return RobustSummary(median=med, mad=mad)


def modified_z_scores(batch: ScoresLike, consistency: float = MZ_CONSISTENCY) -> np.ndarray:
    """Elementwise ``consistency * (s - median) / MAD``.

    Raises:
        DegenerateSpread: if the MAD is zero. Callers pick their own fallback.
    """
    s = as_scores(batch)
    summary = median_mad(s)
    if summary.mad == 0.0:
        raise DegenerateSpread("MAD is zero; modified z-scores are undefined")
    return consistency * (s - summary.median) / summary.mad


def normality_threshold(
    batch: ScoresLike,
    cutoff: float = MZ_CUTOFF,
    consistency: float = MZ_CONSISTENCY,
) -> float:
    """Score above which a sample's modified z-score exceeds ``cutoff``.

    A zero-spread batch gives ``+inf``: no sample is rejected.
    """
    summary = median_mad(batch)
    if summary.mad == 0.0:
        return float("inf")
    return cutoff * summary.mad / consistency + summary.median


def iqr_threshold(batch: ScoresLike, fence: float = IQR_FENCE) -> float:
    """Upper Tukey fence ``Q3 + fence * (Q3 - Q1)``."""
    s = as_scores(batch)
    if s.size < 2:
        raise InvalidInput("IQR threshold needs at least 2 scores")
    q1, q3 = np.quantile(s, [0.25, 0.75], method="linear")
    return float(q3 + fence * (q3 - q1))


def quantile_threshold(batch: ScoresLike, q: float) -> float:
    """Empirical ``q``-quantile; callers reject scores strictly above it."""
    if not 0.0 <= q <= 1.0:
        raise InvalidInput(f"quantile must lie in [0, 1], got {q}")
    s = as_scores(batch)
    return float(np.quantile(s, q, method="linear"))
