"""Tests for the generalized Pareto tail model."""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from src.errors import (
    CalibrationError,
    FitError,
    InsufficientSamplesError,
    InvariantViolationError,
)
from src.evt_core import (
    XI_LOWER_LIMIT,
    calibrate_zeta,
    compute_deficits,
    expected_information,
    fit_gpd_mle,
    gpd_cdf,
    gpd_log_likelihood_sigma,
    gpd_logpdf,
    gpd_pdf,
    mean_deficit_curve,
    observed_information,
    select_threshold,
    sigma_from_reparam,
    tail_cdf,
    tail_quantile,
    write_mean_deficit_csv,
)
from src.models import DeficitSet, GpdParams, TailParams
from src.stats_core import SampleSet
from tests.helpers import gpd_deficits, gpd_tail_samples


class TestGpdDistribution:
    """Tests for gpd_pdf, gpd_cdf and gpd_logpdf."""

    def test_exponential_limit(self):
        """xi = 0 is the exponential distribution."""
        p = GpdParams(sigma=2.0, xi=0.0)
        assert gpd_pdf(1.0, p) == pytest.approx(0.5 * math.exp(-0.5), rel=1e-12)
        assert gpd_cdf(1.0, p) == pytest.approx(1.0 - math.exp(-0.5), rel=1e-12)

    def test_heavy_tail_cdf(self):
        """xi = 0.5, sigma = 1: F(2) = 1 - 2^-2."""
        assert gpd_cdf(2.0, GpdParams(sigma=1.0, xi=0.5)) == pytest.approx(0.75)

    def test_continuity_at_zero_shape(self):
        """Shapes either side of the series switch agree with xi = 0."""
        y = np.array([0.1, 1.0, 5.0])
        base = gpd_cdf(y, GpdParams(sigma=1.0, xi=0.0))
        for xi in (1e-9, -1e-9, 2e-8, -2e-8):
            assert np.max(np.abs(gpd_cdf(y, GpdParams(sigma=1.0, xi=xi)) - base)) <= 1e-7
            pdf = gpd_pdf(y, GpdParams(sigma=1.0, xi=xi))
            assert np.max(np.abs(pdf - gpd_pdf(y, GpdParams(sigma=1.0, xi=0.0)))) <= 1e-7

    def test_bounded_support_for_negative_shape(self):
        """xi < 0 has upper endpoint sigma / |xi|."""
        p = GpdParams(sigma=1.0, xi=-0.5)
        assert gpd_cdf(2.0, p) == 1.0
        assert gpd_cdf(3.0, p) == 1.0
        assert gpd_pdf(3.0, p) == 0.0
        assert gpd_logpdf(3.0, p) == -math.inf

    def test_non_positive_argument(self):
        """Density and CDF vanish at y <= 0."""
        p = GpdParams(sigma=1.0, xi=0.2)
        assert gpd_pdf(0.0, p) == 0.0
        assert gpd_pdf(-1.0, p) == 0.0
        assert gpd_cdf(-1.0, p) == 0.0

    def test_array_input_returns_array(self):
        """Array arguments are evaluated elementwise."""
        out = gpd_cdf([0.5, 1.0], GpdParams(sigma=1.0, xi=0.0))
        assert isinstance(out, np.ndarray)
        assert out.shape == (2,)

    def test_log_likelihood_matches_sum_of_log_densities(self):
        """gpd_log_likelihood_sigma sums gpd_logpdf."""
        d = DeficitSet(u=1.0, deficits=[0.2, 0.5, 1.1])
        p = GpdParams(sigma=0.7, xi=0.1)
        expected = float(np.sum(gpd_logpdf(d.deficits, p)))
        assert gpd_log_likelihood_sigma(d, p) == pytest.approx(expected)

    @pytest.mark.parametrize("xi", [-0.5, -0.2, 0.0, 0.3])
    def test_density_integrates_to_one(self, xi):
        """The density has unit mass over its support."""
        p = GpdParams(sigma=1.5, xi=xi)
        upper = p.sigma / -xi if xi < 0 else math.inf
        mass, _ = integrate.quad(lambda y: gpd_pdf(y, p), 0.0, upper, limit=200)
        assert mass == pytest.approx(1.0, abs=1e-6)


class TestTailReparametrization:
    """Tests for tail_quantile, tail_cdf and sigma_from_reparam."""

    def test_round_trip(self):
        """tail_cdf(tail_quantile(eps)) = eps."""
        gpd = GpdParams(sigma=0.8, xi=-0.2)
        x = tail_quantile(gpd, 2.0, 0.1, 0.01)
        t = TailParams(x_eps=x, xi=-0.2, p_u=0.1, u=2.0, epsilon=0.01)
        assert tail_cdf(x, t) == pytest.approx(0.01, abs=1e-9)
        assert sigma_from_reparam(t) == pytest.approx(0.8, rel=1e-12)

    def test_round_trip_near_zero_shape(self):
        """The series branch keeps the round trip exact."""
        gpd = GpdParams(sigma=0.5, xi=1e-10)
        x = tail_quantile(gpd, 3.0, 0.2, 0.01)
        t = TailParams(x_eps=x, xi=1e-10, p_u=0.2, u=3.0, epsilon=0.01)
        assert tail_cdf(x, t) == pytest.approx(0.01, abs=1e-9)

    def test_exponential_quantile(self):
        """xi = 0: X_eps = u - sigma ln(p_u / eps)."""
        x = tail_quantile(GpdParams(sigma=1.0, xi=0.0), 5.0, 0.1, 0.01)
        assert x == pytest.approx(5.0 - math.log(10.0))

    def test_tail_cdf_above_threshold(self):
        """The tail model only covers x < u."""
        t = TailParams(x_eps=1.0, xi=0.0, p_u=0.1, u=2.0, epsilon=0.01)
        with pytest.raises(ValueError):
            tail_cdf(2.0, t)

    def test_tail_quantile_requires_eps_below_pu(self):
        """epsilon above p_u is an argument error."""
        with pytest.raises(ValueError):
            tail_quantile(GpdParams(sigma=1.0, xi=0.0), 1.0, 0.01, 0.1)

    def test_overflowing_scale_is_an_invariant_violation(self):
        """A huge shape makes the implied scale underflow to an invalid value."""
        t = TailParams(x_eps=1.0, xi=500.0, p_u=0.5, u=2.0, epsilon=0.001)
        with pytest.raises(InvariantViolationError):
            sigma_from_reparam(t)


class TestThresholdAndDeficits:
    """Tests for select_threshold and compute_deficits."""

    def test_select_threshold(self):
        """r = max(ceil(n zeta), r_min), u = X_(r)."""
        s = SampleSet(values=np.arange(1, 1001, dtype=float))
        assert select_threshold(s, 0.1, 50) == (100.0, 100)
        assert select_threshold(s, 0.01, 50) == (50.0, 50)

    def test_select_threshold_insufficient(self):
        """Fewer samples than r_min."""
        s = SampleSet(values=np.arange(1, 41, dtype=float))
        with pytest.raises(InsufficientSamplesError):
            select_threshold(s, 0.1, 50)

    def test_select_threshold_argument_errors(self):
        """zeta outside (0, 1] and r_min < 2 are rejected."""
        s = SampleSet(values=np.arange(1, 101, dtype=float))
        with pytest.raises(ValueError):
            select_threshold(s, 0.0, 10)
        with pytest.raises(ValueError):
            select_threshold(s, 0.1, 1)

    def test_deficits_exclude_ties(self):
        """Only samples strictly below u contribute."""
        d = compute_deficits(SampleSet(values=[1.0, 2.0, 3.0, 3.0, 4.0]), 3.0)
        assert sorted(d.deficits.tolist()) == [1.0, 2.0]
        assert d.u == 3.0


class TestGpdFit:
    """Tests for fit_gpd_mle and observed_information."""

    def test_recovers_parameters(self):
        """MLE on 2e4 GPD(1, -0.2) draws."""
        fit = fit_gpd_mle(gpd_deficits(20_000, 1.0, -0.2, seed=11))
        assert fit.sigma == pytest.approx(1.0, rel=0.05)
        assert fit.xi == pytest.approx(-0.2, abs=0.04)

    def test_recovers_heavy_tail(self):
        """MLE on GPD(0.5, 0.3) draws."""
        fit = fit_gpd_mle(gpd_deficits(20_000, 0.5, 0.3, seed=12))
        assert fit.sigma == pytest.approx(0.5, rel=0.06)
        assert fit.xi == pytest.approx(0.3, abs=0.05)

    def test_too_few_deficits(self):
        """Fewer than ten deficits cannot be fitted."""
        with pytest.raises(InsufficientSamplesError):
            fit_gpd_mle(DeficitSet(u=1.0, deficits=[0.1, 0.2, 0.3]))

    def test_degenerate_deficits(self):
        """Identical deficits have no likelihood maximum."""
        with pytest.raises(FitError):
            fit_gpd_mle(DeficitSet(u=1.0, deficits=[0.5] * 20))

    def test_observed_information_exponential(self):
        """For xi = 0 at sigma = mean(y) the sigma entry is n / sigma^2."""
        d = gpd_deficits(5_000, 1.0, 0.0, seed=13)
        sigma = float(np.mean(d.deficits))
        info = observed_information(d, GpdParams(sigma=sigma, xi=0.0))
        assert info[0, 0] == pytest.approx(len(d) / sigma**2, rel=1e-3)
        assert info[0, 1] == info[1, 0]

    def test_observed_information_positive_definite_at_mle(self):
        """The information matrix at the MLE is positive definite."""
        d = gpd_deficits(5_000, 1.0, -0.1, seed=14)
        info = observed_information(d, fit_gpd_mle(d))
        assert np.all(np.linalg.eigvalsh(info) > 0)

    def test_observed_information_near_support_edge(self):
        """Steps shrink so a scale just above -xi max(y) still gives a finite matrix."""
        d = gpd_deficits(2_000, 1.0, -0.4, seed=15)
        y_max = float(np.max(d.deficits))
        info = observed_information(d, GpdParams(sigma=0.9 * y_max * 1.0001, xi=-0.9))
        assert np.all(np.isfinite(info))

    def test_expected_information_matches_observed(self):
        """At the true parameters the observed information approaches the Fisher one."""
        p = GpdParams(sigma=1.0, xi=0.1)
        d = gpd_deficits(50_000, p.sigma, p.xi, seed=16)
        expected = expected_information(len(d), p)
        observed = observed_information(d, p)
        assert observed == pytest.approx(expected, rel=0.05)
        assert expected[0, 1] < 0

    def test_expected_information_needs_regular_shape(self):
        """The Fisher information diverges at xi <= -1/2."""
        with pytest.raises(FitError):
            expected_information(100, GpdParams(sigma=1.0, xi=-0.5))
        with pytest.raises(InsufficientSamplesError):
            expected_information(0, GpdParams(sigma=1.0, xi=0.0))

    def test_uniform_tail_fits_at_shape_limit(self):
        """Deficits with a hard endpoint drive the shape to the lower limit."""
        rng = np.random.default_rng(17)
        fit = fit_gpd_mle(DeficitSet(u=1.0, deficits=rng.uniform(0.0, 1.0, 5_000)))
        assert XI_LOWER_LIMIT < fit.xi < XI_LOWER_LIMIT + 0.05


class TestMeanDeficit:
    """Tests for the mean-deficit curve and zeta calibration."""

    def test_curve_values(self):
        """e(u) = u - mean(X | X < u); empty thresholds omitted."""
        points = mean_deficit_curve(SampleSet(values=[1.0, 2.0, 3.0, 4.0]), [1.0, 3.0, 5.0])
        assert [(p.u, p.e_hat, p.count) for p in points] == [(3.0, 1.5, 2), (5.0, 2.5, 4)]

    def test_csv_export(self, tmp_path):
        """Header u,e_hat,count followed by one row per point."""
        path = tmp_path / "deficit.csv"
        write_mean_deficit_csv(path, mean_deficit_curve(SampleSet(values=[1.0, 2.0]), [3.0]))
        assert path.read_text(encoding="utf-8") == "u,e_hat,count\n3,1.5,2\n"

    def test_uniform_samples_are_linear_throughout(self):
        """Uniform data have e(u) = u / 2, so nearly all samples lie in the linear region."""
        rng = np.random.default_rng(3)
        samples = [SampleSet(values=rng.uniform(0.01, 1.0, 5_000)) for _ in range(3)]
        assert calibrate_zeta(samples) > 0.9

    def test_all_locations_skipped(self):
        """Tiny sample sets give no curve to calibrate on."""
        with pytest.raises(CalibrationError):
            calibrate_zeta([SampleSet(values=[1.0, 2.0, 3.0])])

    @pytest.mark.parametrize("xi", [-0.3, 0.2])
    def test_slope_of_gpd_tail(self, xi):
        """Below a GPD tail the mean deficit is linear in u with slope -xi / (1 - xi)."""
        s = gpd_tail_samples(200_000, 1.0, xi, seed=18)
        thresholds = np.quantile(s.values, np.linspace(0.02, 0.15, 20))
        points = mean_deficit_curve(s, thresholds)
        fit = stats.linregress([p.u for p in points], [p.e_hat for p in points])
        assert fit.slope == pytest.approx(-xi / (1.0 - xi), abs=0.05)
