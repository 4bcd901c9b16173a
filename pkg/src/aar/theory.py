"""Robustness of quantile rejection thresholds.

For a labeled score set, the robustness of rejecting everything above the
``q``-quantile ``tau_q`` is

    R(q) = sum_{normal, s <= tau_q} s / sum_{normal} s
         - sum_{anomaly, s <= tau_q} s / sum_{anomaly} s

i.e. the share of normal loss mass kept minus the share of anomalous loss
mass kept. For a two-component score mixture ``alpha * s_n + (1 - alpha) * s_a``
it is maximized where ``s_n(tau) / s_a(tau) = E[s_n] / E[s_a]``.
This module evaluates both the empirical and the analytic curve and locates
that optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy import integrate, optimize

from aar.errors import InvalidInput, NoRoot, NumericalFailure
from aar.score_stats import ScoreBatch

_TAIL_SIGMAS = 12.0
_QUAD_TOL = 1e-8
_TAU_TOL = 1e-10


_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _std_cdf(t: float) -> float:
    return 0.5 * math.erfc(-t / _SQRT2)


@dataclass(frozen=True)
class Gaussian:
    """Scalar Gaussian, optionally truncated to ``[0, inf)``.

    Plain ``math`` calls: the quadrature evaluates these thousands of times.
    """

    mu: float
    sigma: float
    truncated: bool = False

    @property
    def _log_z(self) -> float:
        return math.log(_std_cdf(self.mu / self.sigma)) if self.truncated else 0.0

    def logpdf(self, x: float) -> float:
        if self.truncated and x < 0:
            return -math.inf
        t = (x - self.mu) / self.sigma
        return -0.5 * t * t - math.log(self.sigma) - _LOG_SQRT_2PI - self._log_z

    def pdf(self, x: float) -> float:
        return math.exp(self.logpdf(x))

    def cdf(self, x: float) -> float:
        if not self.truncated:
            return _std_cdf((x - self.mu) / self.sigma)
        if x <= 0:
            return 0.0
        lo = _std_cdf(-self.mu / self.sigma)
        return (_std_cdf((x - self.mu) / self.sigma) - lo) / (1.0 - lo)

    def mean(self) -> float:
        if not self.truncated:
            return self.mu
        a = -self.mu / self.sigma
        phi = math.exp(-0.5 * a * a - _LOG_SQRT_2PI)
        return self.mu + self.sigma * phi / _std_cdf(-a)


@dataclass(frozen=True)
class MixtureSpec:
    """Normal/anomaly score densities and the normal fraction ``alpha``.

    ``normal`` and ``abnormal`` are ``(mean, std)`` of Gaussian components.
    With ``truncate=True`` both are truncated to ``[0, inf)``.
    """

    alpha: float
    normal: tuple[float, float]
    abnormal: tuple[float, float]
    truncate: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInput(f"alpha must lie in (0, 1), got {self.alpha}")
        (mu_n, sd_n), (mu_a, sd_a) = self.normal, self.abnormal
        if sd_n <= 0 or sd_a <= 0:
            raise InvalidInput("component standard deviations must be > 0")
        if not mu_n < mu_a:
            raise InvalidInput("the normal component must have the lower mean")
        if self.dist("normal").mean() <= 0:
            raise InvalidInput("normal scores must have a positive mean")

    def dist(self, which: str) -> Gaussian:
        mu, sd = self.normal if which == "normal" else self.abnormal
        return Gaussian(float(mu), float(sd), self.truncate)

    @property
    def support_low(self) -> float:
        return 0.0 if self.truncate else -math.inf

    def cdf(self, x: float) -> float:
        return self.alpha * self.dist("normal").cdf(x) + (1.0 - self.alpha) * self.dist("abnormal").cdf(x)

    def pdf(self, x: float) -> float:
        return self.alpha * self.dist("normal").pdf(x) + (1.0 - self.alpha) * self.dist("abnormal").pdf(x)


@dataclass(frozen=True)
class RobustnessPoint:
    q: float
    tau_q: float
    r: float


# ---------------------------------------------------------------- empirical


def empirical_robustness(batch: ScoreBatch, q: float) -> RobustnessPoint:
    """``R(q)`` on a labeled batch, ``tau_q`` the type-7 empirical quantile.

    Scores equal to ``tau_q`` count as kept.
    """
    if batch.labels is None:
        raise InvalidInput("empirical robustness needs labels")
    if not 0.0 <= q <= 1.0:
        raise InvalidInput(f"q must lie in [0, 1], got {q}")
    s, y = batch.scores, batch.labels
    normal, abnormal = s[y == 0], s[y == 1]
    if normal.size == 0 or abnormal.size == 0:
        raise InvalidInput("both classes must be present")
    if normal.sum() <= 0 or abnormal.sum() <= 0:
        raise InvalidInput("each class needs a positive total score")
    tau = float(np.quantile(s, q, method="linear"))
    r = normal[normal <= tau].sum() / normal.sum() - abnormal[abnormal <= tau].sum() / abnormal.sum()
    return RobustnessPoint(q=q, tau_q=tau, r=float(r))


def empirical_robustness_curve(batch: ScoreBatch, qs: Iterable[float]) -> list[RobustnessPoint]:
    return [empirical_robustness(batch, q) for q in qs]


# ---------------------------------------------------------------- analytic


def _bracket(mix: MixtureSpec) -> tuple[float, float]:
    (mu_n, sd_n), (mu_a, sd_a) = mix.normal, mix.abnormal
    lo = min(mu_n - _TAIL_SIGMAS * sd_n, mu_a - _TAIL_SIGMAS * sd_a)
    hi = max(mu_n + _TAIL_SIGMAS * sd_n, mu_a + _TAIL_SIGMAS * sd_a)
    return max(lo, mix.support_low), hi


def quantile_of(mix: MixtureSpec, q: float) -> float:
    """Invert the mixture CDF by bisection (absolute tolerance 1e-10 on ``tau``)."""
    if q <= 0.0:
        return mix.support_low
    if q >= 1.0:
        return math.inf
    lo, hi = _bracket(mix)
    n, a, alpha = mix.dist("normal"), mix.dist("abnormal"), mix.alpha
    f = lambda x: alpha * n.cdf(x) + (1.0 - alpha) * a.cdf(x) - q  # noqa: E731
    if f(lo) > 0:
        return lo
    if f(hi) < 0:
        return hi
    return float(optimize.bisect(f, lo, hi, xtol=_TAU_TOL, maxiter=500))


def partial_moment(mix: MixtureSpec, which: str, tau: float) -> float:
    """``int_{-inf}^{tau} x s(x) dx`` by adaptive quadrature.

    Mass beyond 12 standard deviations on either side is ignored (below 1e-30).
    """
    dist = mix.dist(which)
    mu, sd = mix.normal if which == "normal" else mix.abnormal
    if tau == math.inf:
        return float(dist.mean())
    lo = max(mu - _TAIL_SIGMAS * sd, mix.support_low)
    if tau <= lo:
        return 0.0
    hi = min(tau, mu + _TAIL_SIGMAS * sd)
    value, err, *rest = integrate.quad(
        lambda x: x * dist.pdf(x), lo, hi, epsabs=_QUAD_TOL, epsrel=_QUAD_TOL,
        limit=200, full_output=1,
    )
    if len(rest) > 1 or not math.isfinite(value) or err > 10 * _QUAD_TOL:
        raise NumericalFailure(f"quadrature did not converge at tau={tau} (err={err})")
    return value


def mixture_robustness(mix: MixtureSpec, q: float) -> RobustnessPoint:
    tau = quantile_of(mix, q)
    mean_n = float(mix.dist("normal").mean())
    mean_a = float(mix.dist("abnormal").mean())
    r = partial_moment(mix, "normal", tau) / mean_n - partial_moment(mix, "abnormal", tau) / mean_a
    return RobustnessPoint(q=q, tau_q=tau, r=r)


def mixture_robustness_curve(mix: MixtureSpec, grid: int = 256) -> list[RobustnessPoint]:
    """``R(q)`` on ``grid`` evenly spaced quantiles covering ``[0, 1]``."""
    if grid < 16:
        raise InvalidInput("grid must have at least 16 points")
    return [mixture_robustness(mix, float(q)) for q in np.linspace(0.0, 1.0, grid)]


def _log_density_gap(mix: MixtureSpec, tau: float) -> float:
    ratio = mix.dist("normal").mean() / mix.dist("abnormal").mean()
    return float(mix.dist("normal").logpdf(tau) - mix.dist("abnormal").logpdf(tau) - math.log(ratio))


def optimal_quantile(mix: MixtureSpec) -> tuple[float, float]:
    """Return ``(tau*, q*)`` with ``s_n(tau*)/s_a(tau*) = E[s_n]/E[s_a]``.

    The root is bracketed by the two component means, where the log density
    ratio of two Gaussians is strictly decreasing.

    Raises:
        NoRoot: the condition has no sign change on ``[mu_n, mu_a]``.
    """
    lo, hi = mix.normal[0], mix.abnormal[0]
    f_lo, f_hi = _log_density_gap(mix, lo), _log_density_gap(mix, hi)
    if f_lo == 0.0:
        tau = lo
    elif f_hi == 0.0:
        tau = hi
    elif f_lo * f_hi > 0:
        raise NoRoot(
            "density-ratio condition has no sign change between the component means"
        )
    else:
        tau = float(optimize.bisect(lambda x: _log_density_gap(mix, x), lo, hi, xtol=_TAU_TOL, maxiter=500))
    return tau, mix.cdf(tau)


def curve_argmax(points: list[RobustnessPoint]) -> RobustnessPoint:
    return max(points, key=lambda p: p.r)


def argmax_agrees(points: list[RobustnessPoint], q_star: float) -> bool:
    """True when the curve's argmax lies within one grid cell of ``q_star``."""
    qs = np.array([p.q for p in points])
    cell = float(np.max(np.diff(qs)))
    return abs(curve_argmax(points).q - q_star) <= cell


def write_curve(points: list[RobustnessPoint], path, header: Optional[str] = None) -> None:
    """Tab-separated ``q tau_q R`` rows for plotting."""
    lines = []
    if header:
        lines.extend(f"# {line}" for line in header.splitlines())
    lines.append("q\ttau_q\tR")
    lines.extend(f"{p.q:.10g}\t{p.tau_q:.10g}\t{p.r:.10g}" for p in points)
    Path(path).write_text("\n".join(lines) + "\n")
