"""Two-component 1-D Gaussian mixture fitted by EM, and the soft-rejection thresholds.

Component 1 is always the lower-mean one and is treated as the normal
component: anomalies score higher by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from aar.errors import DegenerateInput, InvalidInput, NumericalFailure
from aar.score_stats import ScoresLike, as_scores

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GmmConfig:
    max_iterations: int = 100
    convergence_tol: float = 1e-6
    variance_floor_rel: float = 1e-6
    variance_floor_abs: float = 1e-12
    init_scheme: str = "quantile_split"

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise InvalidInput("max_iterations must be >= 1")
        if self.convergence_tol <= 0:
            raise InvalidInput("convergence_tol must be > 0")
        if self.variance_floor_rel <= 0 or self.variance_floor_abs <= 0:
            raise InvalidInput("variance floors must be > 0")
        if self.init_scheme != "quantile_split":
            raise InvalidInput(f"unknown init_scheme {self.init_scheme!r}")


@dataclass(frozen=True)
class GmmFit:
    """Fitted mixture, components sorted by mean.

    ``trace`` holds the log-likelihood evaluated at the start of every EM
    iteration followed by the value at the returned parameters, so it is
    non-decreasing up to rounding.
    """

    pi: tuple[float, float]
    mu: tuple[float, float]
    sigma: tuple[float, float]
    log_likelihood: float
    iterations: int
    trace: tuple[float, ...] = ()


@dataclass(frozen=True)
class ThresholdSet:
    """Per-batch thresholds. Fields the active method never computes are ``None``."""

    tau_n: float
    tau_i: Optional[float] = None
    tau_sigma: Optional[float] = None
    tau: Optional[float] = None


def _log_normal(x: np.ndarray, mu: np.ndarray, var: np.ndarray) -> np.ndarray:
    return -0.5 * (x - mu) ** 2 / var - 0.5 * np.log(var) - _LOG_SQRT_2PI


def normal_pdf(x: float, mu: float, sigma: float) -> float:
    return math.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2.0 * math.pi))


def _e_step(s, log_pi, mu, var):
    # log p(s_i, k) for k = 0, 1 -> shape (n, 2)
    joint = log_pi[None, :] + _log_normal(s[:, None], mu[None, :], var[None, :])
    top = joint.max(axis=1, keepdims=True)
    log_norm = top[:, 0] + np.log(np.exp(joint - top).sum(axis=1))
    resp = np.exp(joint - log_norm[:, None])
    return resp, float(log_norm.sum())


def fit_gmm2(batch: ScoresLike, cfg: GmmConfig | None = None, seed: int = 0) -> GmmFit:
    """Fit a two-component Gaussian mixture to a score batch by EM.

    Initialization splits the sorted batch at its median: each half seeds one
    component with its mean and variance, with equal mixing weights. The
    procedure is deterministic, so ``seed`` is accepted for interface
    stability only.

    The M-step clamps each variance at ``max(rel * var(batch), abs)``; the
    clamped value is still the constrained maximizer, so the likelihood
    stays monotone.

    Raises:
        DegenerateInput: fewer than 4 scores, or all scores equal.
        NumericalFailure: the log-likelihood becomes non-finite.
    """
    del seed
    cfg = cfg or GmmConfig()
    s = as_scores(batch)
    n = s.size
    if n < 4:
        raise DegenerateInput(f"need at least 4 scores to fit a mixture, got {n}")
    total_var = float(np.var(s))
    if total_var == 0.0 or np.ptp(s) == 0.0:
        raise DegenerateInput("all scores are equal")
    floor = max(cfg.variance_floor_rel * total_var, cfg.variance_floor_abs)

    ordered = np.sort(s)
    lower, upper = ordered[: n // 2], ordered[n // 2 :]
    mu = np.array([lower.mean(), upper.mean()])
    var = np.maximum(np.array([lower.var(), upper.var()]), floor)
    log_pi = np.log(np.array([0.5, 0.5]))

    trace: list[float] = []
    prev = -math.inf
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        resp, ll = _e_step(s, log_pi, mu, var)
        if not math.isfinite(ll):
            raise NumericalFailure("EM log-likelihood is not finite")
        trace.append(ll)
        if abs(ll - prev) < cfg.convergence_tol:
            break
        prev = ll
        # M-step
        nk = resp.sum(axis=0)
        alive = nk > 0
        safe_nk = np.where(alive, nk, 1.0)
        new_mu = (resp * s[:, None]).sum(axis=0) / safe_nk
        new_var = (resp * (s[:, None] - new_mu[None, :]) ** 2).sum(axis=0) / safe_nk
        # a component that lost all mass keeps its previous location/scale
        mu = np.where(alive, new_mu, mu)
        var = np.maximum(np.where(alive, new_var, var), floor)
        log_pi = np.log(np.maximum(nk / n, np.finfo(float).tiny))
    else:
        _, ll = _e_step(s, log_pi, mu, var)
        if not math.isfinite(ll):
            raise NumericalFailure("EM log-likelihood is not finite")
        trace.append(ll)

    pi = np.exp(log_pi)
    pi = pi / pi.sum()
    order = np.argsort(mu, kind="stable")
    pi, mu, sigma = pi[order], mu[order], np.sqrt(var)[order]
    return GmmFit(
        pi=(float(pi[0]), float(1.0 - pi[0])),
        mu=(float(mu[0]), float(mu[1])),
        sigma=(float(sigma[0]), float(sigma[1])),
        log_likelihood=trace[-1],
        iterations=iterations,
        trace=tuple(trace),
    )


def intersection_threshold(fit: GmmFit) -> Optional[float]:
    """Point strictly between the two means where the component densities are equal.

    Solves ``a x^2 + 2 b x + c = 0`` with
    ``a = 1/s1^2 - 1/s2^2``, ``b = m2/s2^2 - m1/s1^2``,
    ``c = m1^2/s1^2 - m2^2/s2^2 - 2 ln(s2/s1)``. Only the root inside
    ``(mu_1, mu_2)`` is meaningful. Returns ``None`` when no such root exists.
    """
    (m1, m2), (s1, s2) = fit.mu, fit.sigma
    if not m1 < m2:
        return None
    p1, p2 = 1.0 / s1**2, 1.0 / s2**2
    a = p1 - p2
    b = m2 * p2 - m1 * p1
    c = m1 * m1 * p1 - m2 * m2 * p2 - 2.0 * math.log(s2 / s1)

    if abs(a) < 1e-12 * max(p1, p2):
        if b == 0.0:
            return None
        roots = [-c / (2.0 * b)]
    else:
        disc = b * b - a * c
        if disc < 0.0:
            return None
        # a x^2 + 2 b x + c: stable form avoiding cancellation
        qv = -(b + math.copysign(math.sqrt(disc), b))
        roots = [qv / a]
        if qv != 0.0:
            roots.append(c / qv)
    inside = [r for r in roots if m1 < r < m2]
    if not inside:
        return None
    return float(inside[0])


def z_sigma_threshold(fit: GmmFit, z: float) -> float:
    """``mu_1 + z * sigma_1`` from the normal (lower-mean) component."""
    return fit.mu[0] + z * fit.sigma[0]


def soft_threshold(fit: GmmFit, z: float) -> float:
    """``max(tau_sigma, tau_I)``, or ``tau_sigma`` alone when no intersection exists."""
    tau_sigma = z_sigma_threshold(fit, z)
    tau_i = intersection_threshold(fit)
    return tau_sigma if tau_i is None else max(tau_sigma, tau_i)
