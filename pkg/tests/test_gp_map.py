"""Tests for CDI map fitting, prediction and persistence."""

import math

import numpy as np
import pytest

from src.errors import FitError
from src.gp_map import (
    OBSERVATION_HEADER,
    estimate_theta_density,
    estimate_theta_quantile,
    fit_cdi_map,
    load_map,
    map_mode,
    noninformative_map,
    predict,
    predict_many,
    save_map,
)
from src.models import CdiObservation, GpHyperParams, Location
from src.stats_core import SampleSet, empirical_quantile

FIXED = GpHyperParams(signal_variance=1.0, lengthscale_m=5.0, nugget=1e-6, mean=0.0)


def _obs(points: list[tuple[float, float, float]]) -> list[CdiObservation]:
    return [
        CdiObservation(location=Location(id=i, x=x, y=y, z=0.0), theta_hat=v)
        for i, (x, y, v) in enumerate(points)
    ]


TRIANGLE = _obs([(0.0, 0.0, 1.0), (10.0, 0.0, -1.0), (0.0, 10.0, 0.5)])


class TestFitCdiMap:
    """Tests for fit_cdi_map."""

    def test_fixed_hyperparameters_interpolate(self):
        """With a tiny nugget the map reproduces its training values."""
        cdi_map = fit_cdi_map(TRIANGLE, log_domain=False, hyper=FIXED)
        assert cdi_map.hyper == FIXED
        mu, sigma2 = predict(cdi_map, Location(id=9, x=0.0, y=0.0))
        assert mu == pytest.approx(1.0, abs=1e-3)
        assert sigma2 < 1e-3

    def test_far_prediction_reverts_to_prior(self):
        """Far from the data the predictive is the GP prior."""
        cdi_map = fit_cdi_map(TRIANGLE, log_domain=False, hyper=FIXED)
        mu, sigma2 = predict(cdi_map, Location(id=9, x=1000.0, y=1000.0))
        assert mu == pytest.approx(0.0, abs=1e-9)
        assert sigma2 == pytest.approx(1.0 + 1e-6)

    def test_predict_many_matches_predict(self):
        """Batch and single predictions agree."""
        cdi_map = fit_cdi_map(TRIANGLE, log_domain=False, hyper=FIXED)
        targets = [Location(id=1, x=3.0, y=4.0), Location(id=2, x=-2.0, y=7.0)]
        mus, sigma2s = predict_many(cdi_map, targets)
        for loc, mu, s2 in zip(targets, mus, sigma2s):
            assert (mu, s2) == pytest.approx(predict(cdi_map, loc))

    def test_optimized_hyperparameters(self):
        """Marginal-likelihood search recovers a smooth field."""
        points = [
            (x, y, math.sin(x / 20.0) + math.cos(y / 25.0))
            for x in np.arange(0.0, 45.0, 5.0)
            for y in np.arange(0.0, 45.0, 5.0)
        ]
        cdi_map = fit_cdi_map(_obs(points), log_domain=False)
        assert cdi_map.hyper.signal_variance > 0
        assert cdi_map.hyper.lengthscale_m > 0
        mu, _ = predict(cdi_map, Location(id=999, x=12.5, y=17.5))
        assert mu == pytest.approx(math.sin(12.5 / 20.0) + math.cos(17.5 / 25.0), abs=0.2)

    def test_duplicates_merged(self):
        """Observations at the same coordinates are averaged."""
        obs = _obs([(0.0, 0.0, 1.0), (0.0, 0.0, 3.0), (10.0, 0.0, 0.0)])
        cdi_map = fit_cdi_map(obs, log_domain=False, hyper=FIXED)
        assert cdi_map.duplicates_merged == 1
        assert len(cdi_map.observations) == 2
        assert cdi_map.observations[0].theta_hat == pytest.approx(2.0)

    def test_too_few_locations(self):
        """One distinct location cannot define a map."""
        obs = _obs([(0.0, 0.0, 1.0), (0.0, 0.0, 2.0)])
        with pytest.raises(ValueError):
            fit_cdi_map(obs, log_domain=False, hyper=FIXED)

    def test_map_mode_log_domain(self):
        """Log-domain maps report exp(mu - sigma2)."""
        cdi_map = fit_cdi_map(TRIANGLE, log_domain=True, hyper=FIXED)
        loc = Location(id=5, x=4.0, y=4.0)
        mu, sigma2 = predict(cdi_map, loc)
        assert map_mode(cdi_map, loc) == pytest.approx(math.exp(mu - sigma2))

    def test_map_mode_linear_domain(self):
        """Linear-domain maps report the predictive mean."""
        cdi_map = fit_cdi_map(TRIANGLE, log_domain=False, hyper=FIXED)
        loc = Location(id=5, x=4.0, y=4.0)
        assert map_mode(cdi_map, loc) == pytest.approx(predict(cdi_map, loc)[0])

    def test_more_observations_never_raise_variance(self):
        """Adding an observation can only shrink the predictive variance."""
        points = [(2.0, 3.0), (8.0, 8.0), (-5.0, 4.0), (0.0, 12.0), (30.0, 30.0)]
        targets = [Location(id=i, x=x, y=y) for i, (x, y) in enumerate(points)]
        _, fewer = predict_many(fit_cdi_map(TRIANGLE[:2], log_domain=False, hyper=FIXED), targets)
        _, more = predict_many(fit_cdi_map(TRIANGLE, log_domain=False, hyper=FIXED), targets)
        assert np.all(more <= fewer + 1e-12)
        assert more[3] < fewer[3]

    def test_prediction_is_continuous(self):
        """A millimetre shift barely moves the predictive mean and variance."""
        cdi_map = fit_cdi_map(TRIANGLE, log_domain=False, hyper=FIXED)
        here = predict(cdi_map, Location(id=1, x=3.0, y=4.0))
        there = predict(cdi_map, Location(id=2, x=3.001, y=4.0))
        assert there == pytest.approx(here, abs=1e-3)

    def test_lengthscale_recovered_from_a_gp_draw(self):
        """The marginal-likelihood fit finds the lengthscale of a simulated field."""
        xs = np.arange(0.0, 36.0, 3.0)
        coords = np.array([(x, y, 0.0) for x in xs for y in xs])
        sq = np.sum((coords[:, None, :] - coords[None, :, :]) ** 2, axis=-1)
        cov = np.exp(-0.5 * sq / 10.0**2) + 1e-4 * np.eye(len(coords))
        field = np.linalg.cholesky(cov) @ np.random.default_rng(11).standard_normal(len(coords))
        obs = [
            CdiObservation(location=Location(id=i, x=c[0], y=c[1], z=0.0), theta_hat=v)
            for i, (c, v) in enumerate(zip(coords, field))
        ]
        cdi_map = fit_cdi_map(obs, log_domain=False)
        assert 5.0 < cdi_map.hyper.lengthscale_m < 20.0

    def test_noninformative_map(self):
        """The fallback map predicts the mean of its values with the given variance."""
        locations = [o.location for o in TRIANGLE]
        cdi_map = noninformative_map(locations, [1.0, 2.0, 6.0], log_domain=True, variance=4.0)
        for loc in locations + [Location(id=7, x=50.0, y=-20.0)]:
            mu, sigma2 = predict(cdi_map, loc)
            assert mu == pytest.approx(3.0)
            assert sigma2 == pytest.approx(4.0, rel=1e-6)


class TestThetaEstimates:
    """Tests for the per-location statistic estimators."""

    def test_quantile_statistic_is_log(self):
        """theta is the log of the empirical quantile."""
        s = SampleSet(values=np.linspace(0.1, 10.0, 500))
        assert estimate_theta_quantile(s, 0.05) == pytest.approx(
            math.log(empirical_quantile(s, 0.05))
        )

    def test_density_of_uniform_log(self):
        """ln X uniform on [0, 1] has unit density; the average over draws is close to 1."""
        estimates = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            s = SampleSet(values=np.exp(rng.uniform(0.0, 1.0, 20_000)))
            estimates.append(estimate_theta_density(s, 0.1))
        # a single estimate uses 86 spacings, about 11% relative spread
        assert np.mean(estimates) == pytest.approx(1.0, rel=0.1)
        assert all(0.5 < f < 2.0 for f in estimates)

    def test_density_needs_two_samples(self):
        """A single sample has no spacing."""
        with pytest.raises(ValueError):
            estimate_theta_density(SampleSet(values=[1.0]), 0.1)

    def test_density_of_constant_samples(self):
        """Equal samples leave the density undefined."""
        with pytest.raises(FitError):
            estimate_theta_density(SampleSet(values=[2.0] * 50), 0.1)


class TestMapPersistence:
    """Tests for save_map and load_map."""

    def test_reload_predicts_identically(self, tmp_path):
        """A reloaded map gives the same predictive."""
        cdi_map = fit_cdi_map(TRIANGLE, log_domain=True, hyper=FIXED)
        csv_path, toml_path = tmp_path / "map.csv", tmp_path / "map.toml"
        save_map(cdi_map, csv_path, toml_path)
        assert csv_path.read_text(encoding="utf-8").splitlines()[0] == ",".join(
            OBSERVATION_HEADER
        )
        loaded = load_map(csv_path, toml_path)
        assert loaded.log_domain is True
        assert loaded.hyper == FIXED
        loc = Location(id=7, x=2.0, y=3.0)
        assert predict(loaded, loc) == pytest.approx(predict(cdi_map, loc))

    def test_missing_file(self, tmp_path):
        """Both files must exist."""
        with pytest.raises(FileNotFoundError):
            load_map(tmp_path / "map.csv", tmp_path / "map.toml")

    def test_malformed_hyperparameters(self, tmp_path):
        """A TOML file without the hyperparameters table is rejected."""
        cdi_map = fit_cdi_map(TRIANGLE, log_domain=False, hyper=FIXED)
        csv_path, toml_path = tmp_path / "map.csv", tmp_path / "map.toml"
        save_map(cdi_map, csv_path, toml_path)
        toml_path.write_text("[other]\nvalue = 1\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_map(csv_path, toml_path)
