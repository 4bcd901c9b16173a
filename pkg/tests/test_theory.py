import math

import numpy as np
import pytest

from aar.data.synthetic import synth_labeled_scores
from aar.errors import InvalidInput
from aar.score_stats import ScoreBatch
from aar.theory import (
    MixtureSpec,
    argmax_agrees,
    curve_argmax,
    empirical_robustness,
    mixture_robustness,
    mixture_robustness_curve,
    optimal_quantile,
    quantile_of,
    write_curve,
)

CANONICAL = MixtureSpec(alpha=0.8, normal=(2.0, 0.5), abnormal=(5.0, 1.0))


def closed_form_tau(mix):
    """Root in (mu_n, mu_a) of log s_n - log s_a = log(mu_n / mu_a), as a quadratic in x."""
    (mn, sn), (ma, sa) = mix.normal, mix.abnormal
    a = 1 / (2 * sa**2) - 1 / (2 * sn**2)
    b = mn / sn**2 - ma / sa**2
    c = ma**2 / (2 * sa**2) - mn**2 / (2 * sn**2) + math.log(sa / sn) - math.log(mn / ma)
    roots = np.roots([a, b, c]) if abs(a) > 1e-15 else np.array([-c / b])
    inside = [r.real for r in np.atleast_1d(roots) if abs(r.imag) < 1e-12 and mn < r.real < ma]
    assert len(inside) == 1
    return inside[0]


def random_mixtures(seed, count=5):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        mn = rng.uniform(1.0, 3.0)
        yield MixtureSpec(
            alpha=float(rng.uniform(0.6, 0.95)),
            normal=(float(mn), float(rng.uniform(0.3, 1.0))),
            abnormal=(float(mn + rng.uniform(1.5, 4.0)), float(rng.uniform(0.3, 1.2))),
        )


class TestMixtureSpec:
    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
    def test_alpha_bounds(self, alpha):
        with pytest.raises(InvalidInput):
            MixtureSpec(alpha=alpha, normal=(2, 0.5), abnormal=(5, 1))

    def test_ordering_and_scale(self):
        with pytest.raises(InvalidInput):
            MixtureSpec(alpha=0.8, normal=(5, 0.5), abnormal=(2, 1))
        with pytest.raises(InvalidInput):
            MixtureSpec(alpha=0.8, normal=(2, 0.0), abnormal=(5, 1))

    def test_cdf_matches_scipy(self):
        stats = pytest.importorskip("scipy.stats")
        for x in (0.0, 2.0, 3.3, 6.0):
            expected = 0.8 * stats.norm.cdf(x, 2, 0.5) + 0.2 * stats.norm.cdf(x, 5, 1)
            assert CANONICAL.cdf(x) == pytest.approx(expected, abs=1e-14)


class TestEmpirical:
    BATCH = ScoreBatch([1.0, 2.0, 3.0, 4.0], [0, 0, 1, 1])

    def test_q_one(self):
        assert empirical_robustness(self.BATCH, 1.0).r == 0.0

    def test_q_zero(self):
        assert empirical_robustness(self.BATCH, 0.0).r == pytest.approx(1 / 3)

    def test_half(self):
        p = empirical_robustness(self.BATCH, 0.5)
        assert p.tau_q == 2.5 and p.r == 1.0

    def test_needs_both_classes(self):
        with pytest.raises(InvalidInput):
            empirical_robustness(ScoreBatch([1.0, 2.0], [0, 0]), 0.5)
        with pytest.raises(InvalidInput):
            empirical_robustness(ScoreBatch([1.0, 2.0]), 0.5)

    def test_monotone_components(self):
        b = synth_labeled_scores(CANONICAL, 2000, seed=1)
        s, y = b.scores, b.labels
        qs = np.linspace(0, 1, 41)
        taus = np.quantile(s, qs)
        for cls in (0, 1):
            part = np.array([s[(y == cls) & (s <= t)].sum() for t in taus]) / s[y == cls].sum()
            assert np.all(np.diff(part) >= 0)


class TestCurve:
    def test_boundaries(self):
        pts = mixture_robustness_curve(CANONICAL, 64)
        assert abs(pts[0].r) < 1e-6 and abs(pts[-1].r) < 1e-6

    def test_grid_minimum(self):
        with pytest.raises(InvalidInput):
            mixture_robustness_curve(CANONICAL, 8)

    def test_unimodal(self):
        r = np.array([p.r for p in mixture_robustness_curve(CANONICAL, 256)])
        signs = np.sign(np.diff(r))
        signs = signs[signs != 0]
        assert np.count_nonzero(np.diff(signs)) == 1

    def test_refinement(self):
        # q = i/64 points are shared by the 65- and 257-point grids
        coarse = mixture_robustness_curve(CANONICAL, 65)
        fine = mixture_robustness_curve(CANONICAL, 257)
        for i, p in enumerate(coarse):
            assert fine[4 * i].q == pytest.approx(p.q, abs=1e-15)
            assert fine[4 * i].r == pytest.approx(p.r, abs=1e-9)
        _, q_star = optimal_quantile(CANONICAL)
        peak = mixture_robustness(CANONICAL, q_star).r
        gaps = [peak - max(p.r for p in mixture_robustness_curve(CANONICAL, g)) for g in (65, 257, 1025)]
        assert min(gaps) >= -1e-9
        assert gaps[2] < 1e-4

    def test_quantile_inversion(self):
        for q in (0.01, 0.3, 0.8, 0.99):
            assert CANONICAL.cdf(quantile_of(CANONICAL, q)) == pytest.approx(q, abs=1e-9)

    def test_matches_empirical(self):
        b = synth_labeled_scores(CANONICAL, 100_000, seed=0)
        for q in np.round(np.arange(0.1, 1.0, 0.1), 10):
            assert empirical_robustness(b, q).r == pytest.approx(mixture_robustness(CANONICAL, q).r, abs=0.02)

    def test_write_curve(self, tmp_path):
        pts = mixture_robustness_curve(CANONICAL, 16)
        path = tmp_path / "curve.tsv"
        write_curve(pts, path, header="mixture canonical")
        rows = [line for line in path.read_text().splitlines() if not line.startswith("#")]
        assert rows[0].split("\t") == ["q", "tau_q", "R"]
        assert len(rows) == 17


class TestOptimalQuantile:
    def test_canonical(self):
        tau, q = optimal_quantile(CANONICAL)
        assert tau == pytest.approx(3.252, abs=0.01)
        assert tau == pytest.approx(closed_form_tau(CANONICAL), abs=1e-8)
        assert q == pytest.approx(CANONICAL.cdf(tau), abs=1e-12)
        # the optimality condition itself
        (mn, sn), (ma, sa) = CANONICAL.normal, CANONICAL.abnormal
        ratio = (math.exp(-((tau - mn) ** 2) / (2 * sn**2)) / sn) / (math.exp(-((tau - ma) ** 2) / (2 * sa**2)) / sa)
        assert ratio == pytest.approx(0.4, rel=1e-8)

    def test_equal_sigma_linear_case(self):
        mix = MixtureSpec(alpha=0.7, normal=(2.0, 0.8), abnormal=(4.5, 0.8))
        mn, ma, s = 2.0, 4.5, 0.8
        expected = (mn + ma) / 2 - s**2 * math.log(mn / ma) / (ma - mn)
        assert optimal_quantile(mix)[0] == pytest.approx(expected, abs=1e-8)

    def test_argmax_agrees_canonical(self):
        _, q_star = optimal_quantile(CANONICAL)
        assert argmax_agrees(mixture_robustness_curve(CANONICAL, 256), q_star)

    def test_random_mixtures(self):
        for mix in random_mixtures(42):
            tau, q_star = optimal_quantile(mix)
            assert tau == pytest.approx(closed_form_tau(mix), abs=1e-8)
            pts = mixture_robustness_curve(mix, 256)
            assert argmax_agrees(pts, q_star), (mix, curve_argmax(pts), q_star)

    def test_argmax_is_the_maximum(self):
        pts = mixture_robustness_curve(CANONICAL, 32)
        assert curve_argmax(pts).r == max(p.r for p in pts)
