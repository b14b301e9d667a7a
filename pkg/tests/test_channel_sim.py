"""Tests for the synthetic multipath channel scenario."""

import math

import numpy as np
import pytest
from scipy import stats

from src.channel_sim import (
    ChannelScenario,
    OutageOracle,
    build_grid,
    draw_capacity_samples,
    ground_truth_quantile,
    reference_pathloss_db,
    sample_locations_thomas,
    sample_locations_uniform,
    scenario_for,
    synthesize_profile,
)
from src.errors import SamplingError
from src.models import Location, MultipathProfile, ScenarioConfig
from src.stats_core import SampleSet


class TestGrid:
    """Tests for build_grid and the reference pathloss."""

    def test_grid_is_row_major(self, small_scenario):
        """11 x 11 nodes with id = iy * nx + ix."""
        grid = build_grid(small_scenario)
        assert len(grid) == 121
        assert (grid[0].x, grid[0].y) == (-10.0, -10.0)
        assert (grid[1].x, grid[1].y) == (-8.0, -10.0)
        assert (grid[11].x, grid[11].y) == (-10.0, -8.0)
        assert [loc.id for loc in grid] == list(range(121))
        assert all(loc.z == 1.5 for loc in grid)

    def test_degenerate_cell(self):
        """A zero-area cell has a single node."""
        grid = build_grid(ScenarioConfig(cell_x_m=(0.0, 0.0), cell_y_m=(0.0, 0.0)))
        assert len(grid) == 1

    def test_reference_pathloss(self):
        """Free-space loss at 1 m and 3.6 GHz."""
        assert reference_pathloss_db(ScenarioConfig()) == pytest.approx(43.57, abs=0.01)


class TestProfiles:
    """Tests for synthesize_profile."""

    def test_deterministic_per_location(self, small_scenario, origin):
        """The same location always gets the same profile."""
        assert synthesize_profile(small_scenario, origin) == synthesize_profile(
            small_scenario, origin
        )

    def test_master_seed_changes_profile(self, small_scenario, origin):
        """Scenarios with different seeds differ."""
        other = small_scenario.model_copy(update={"master_seed": 8})
        assert synthesize_profile(small_scenario, origin) != synthesize_profile(other, origin)

    def test_power_is_split_across_paths(self, small_scenario, origin):
        """Path powers sum to the mean received power."""
        scenario = ChannelScenario(small_scenario)
        profile = scenario.synthesize_profile(origin)
        assert profile.num_paths == 8
        total_w = 10.0 ** ((scenario.mean_rx_power_dbm(origin) - 30.0) / 10.0)
        assert float(np.sum(profile.as_array() ** 2)) == pytest.approx(total_w, rel=1e-9)

    def test_line_of_sight_share(self, small_scenario, origin):
        """The first path carries K / (K + 1) of the power."""
        scenario = ChannelScenario(small_scenario)
        powers = scenario.synthesize_profile(origin).as_array() ** 2
        kappa = scenario.rice_factor(origin)
        assert powers[0] / powers.sum() == pytest.approx(kappa / (kappa + 1.0), rel=1e-9)

    def test_single_path(self, small_scenario, origin):
        """K = 1 gives a non-fading channel."""
        cfg = small_scenario.model_copy(update={"num_paths": 1})
        assert synthesize_profile(cfg, origin).num_paths == 1

    def test_location_outside_cell(self, small_scenario):
        """Locations beyond the cell are rejected."""
        with pytest.raises(ValueError):
            synthesize_profile(small_scenario, Location(id=999, x=50.0, y=0.0))

    def test_scenarios_are_shared(self, small_scenario):
        """Equal configurations reuse one scenario instance."""
        assert scenario_for(small_scenario) is scenario_for(small_scenario.model_copy())

    def test_free_space_loses_six_db_per_doubling(self):
        """With exponent 2 and no shadowing, doubling the distance costs 20 log10(2) dB."""
        cfg = ScenarioConfig(shadowing_sigma_db=0.0, pathloss_exponent=2.0, master_seed=5)
        scenario = ChannelScenario(cfg)
        bx, by, bz = cfg.bs_position_m
        powers = [
            scenario.mean_rx_power_dbm(Location(id=i, x=bx + dist, y=by, z=bz))
            for i, dist in enumerate((5.0, 10.0, 20.0, 40.0))
        ]
        assert np.diff(powers) == pytest.approx([-20.0 * math.log10(2.0)] * 3, abs=1e-9)


class TestCapacitySamples:
    """Tests for draw_capacity_samples and ground_truth_quantile."""

    def test_samples_are_positive_and_reproducible(self, small_scenario, origin):
        """Seeded generators reproduce the draws."""
        profile = synthesize_profile(small_scenario, origin)
        a = draw_capacity_samples(profile, small_scenario, 1000, np.random.default_rng(1))
        b = draw_capacity_samples(profile, small_scenario, 1000, np.random.default_rng(1))
        assert len(a) == 1000
        assert np.all(a.values > 0)
        assert np.array_equal(a.values, b.values)

    def test_single_path_capacity_is_constant(self, small_scenario, origin):
        """One path has no phase interference."""
        cfg = small_scenario.model_copy(update={"num_paths": 1})
        profile = synthesize_profile(cfg, origin)
        samples = draw_capacity_samples(profile, cfg, 100, np.random.default_rng(2))
        expected = math.log2(1.0 + profile.magnitudes[0] ** 2 / cfg.noise_power_w)
        assert np.allclose(samples.values, expected, rtol=1e-12)

    def test_sample_count_must_be_positive(self, small_scenario, origin):
        """n = 0 is an argument error."""
        profile = synthesize_profile(small_scenario, origin)
        with pytest.raises(ValueError):
            draw_capacity_samples(profile, small_scenario, 0, np.random.default_rng(0))

    def test_ground_truth_needs_tail_samples(self, small_scenario, origin):
        """n_ref * epsilon below 100 is rejected."""
        profile = synthesize_profile(small_scenario, origin)
        with pytest.raises(ValueError):
            ground_truth_quantile(profile, small_scenario, 0.01, 1000, np.random.default_rng(0))

    def test_ground_truth_matches_outage_target(self, small_scenario, origin):
        """Fresh draws fall below C_eps about eps of the time."""
        profile = synthesize_profile(small_scenario, origin)
        c_eps = ground_truth_quantile(
            profile, small_scenario, 0.01, 100_000, np.random.default_rng(3)
        )
        fresh = draw_capacity_samples(profile, small_scenario, 100_000, np.random.default_rng(4))
        p_out = float(np.mean(fresh.values < c_eps))
        # binomial SE at eps = 0.01, n = 1e5 is about 3.1e-4
        assert abs(p_out - 0.01) < 5 * 3.2e-4

    def test_many_equal_paths_give_exponential_power(self, small_scenario):
        """64 equal paths approach Rayleigh fading: channel power is exponential."""
        noise = small_scenario.noise_power_w
        profile = MultipathProfile(magnitudes=(math.sqrt(10.0 * noise / 64),) * 64)
        s = draw_capacity_samples(profile, small_scenario, 20_000, np.random.default_rng(5))
        power = np.expm1(s.values * math.log(2.0)) / (10.0 * noise)
        assert stats.kstest(power, stats.expon().cdf).statistic < 0.02

    def test_two_paths_follow_arccos_law(self, small_scenario):
        """|a + b e^{j phi}|^2 has CDF 1 - arccos((p - a^2 - b^2) / 2ab) / pi."""
        noise = small_scenario.noise_power_w
        a, b = math.sqrt(10.0 * noise), math.sqrt(2.5 * noise)
        profile = MultipathProfile(magnitudes=(a, b))
        s = draw_capacity_samples(profile, small_scenario, 20_000, np.random.default_rng(6))
        power = np.expm1(s.values * math.log(2.0)) * noise

        def cdf(p: np.ndarray) -> np.ndarray:
            c = np.clip((p - a * a - b * b) / (2.0 * a * b), -1.0, 1.0)
            return 1.0 - np.arccos(c) / math.pi

        assert stats.kstest(power, cdf).statistic < 0.02


class TestOutageOracle:
    """Tests for the reference-draw outage oracle."""

    def test_p_out_counts_strictly_below(self):
        """Evaluation draws equal to the rate are not outages."""
        oracle = OutageOracle(
            SampleSet(values=np.arange(1, 101, dtype=float)),
            SampleSet(values=[1.0, 2.0, 3.0, 4.0]),
            0.05,
        )
        assert oracle.c_eps == 5.0
        assert oracle.p_out(2.0) == 0.25
        assert oracle.p_out(0.0) == 0.0
        assert oracle.p_out(10.0) == 1.0
        assert oracle.n_ref == 4

    def test_empty_reference_sets(self):
        """Both reference sets are required."""
        with pytest.raises(ValueError):
            OutageOracle(SampleSet(values=[]), SampleSet(values=[1.0]), 0.1)

    def test_simulated_sets_are_independent(self, small_scenario, origin):
        """Truth and evaluation come from different generators."""
        profile = synthesize_profile(small_scenario, origin)
        oracle = OutageOracle.simulate(
            profile,
            small_scenario,
            0.01,
            20_000,
            np.random.default_rng(5),
            np.random.default_rng(6),
        )
        assert not np.array_equal(oracle.truth.values, oracle.evaluation.values)
        assert oracle.c_eps_se > 0


class TestLocationSampling:
    """Tests for Thomas-process and uniform location sampling."""

    def test_thomas_locations_are_distinct(self, small_scenario):
        """Train and test sets are disjoint grid points of the requested sizes."""
        grid = build_grid(small_scenario)
        train, test = sample_locations_thomas(
            small_scenario, grid, 20, 5, np.random.default_rng(0)
        )
        assert len(train) == 20
        assert len(test) == 5
        ids = [loc.id for loc in train + test]
        assert len(set(ids)) == 25
        assert set(ids) <= {loc.id for loc in grid}

    def test_thomas_is_reproducible(self, small_scenario):
        """Same generator seed, same locations."""
        grid = build_grid(small_scenario)
        a = sample_locations_thomas(small_scenario, grid, 10, 3, np.random.default_rng(9))
        b = sample_locations_thomas(small_scenario, grid, 10, 3, np.random.default_rng(9))
        assert a == b

    def test_too_many_locations(self, small_scenario):
        """Requests beyond the grid size are argument errors."""
        grid = build_grid(small_scenario)
        with pytest.raises(ValueError):
            sample_locations_thomas(small_scenario, grid, 100, 22, np.random.default_rng(0))

    def test_round_budget_exhausted(self, small_scenario):
        """One parent batch cannot place 120 points."""
        cfg = small_scenario.model_copy(update={"thomas_max_rounds": 1})
        grid = build_grid(cfg)
        with pytest.raises(SamplingError):
            sample_locations_thomas(cfg, grid, 100, 20, np.random.default_rng(0))

    def test_degenerate_cell(self):
        """Offspring are clipped into a zero-area cell."""
        cfg = ScenarioConfig(cell_x_m=(0.0, 0.0), cell_y_m=(0.0, 0.0))
        grid = build_grid(cfg)
        train, test = sample_locations_thomas(cfg, grid, 1, 0, np.random.default_rng(0))
        assert train == grid
        assert test == []

    def test_uniform_locations(self, small_scenario):
        """Uniform draws are distinct."""
        grid = build_grid(small_scenario)
        train, test = sample_locations_uniform(grid, 30, 10, np.random.default_rng(1))
        assert len({loc.id for loc in train + test}) == 40

    def test_wide_clusters_are_uniform(self, small_scenario):
        """With a spread far beyond the cell, Thomas draws cover the grid columns evenly."""
        cfg = small_scenario.model_copy(update={"thomas_offspring_spread_m": 100.0})
        grid = build_grid(cfg)
        rng = np.random.default_rng(9)
        draws = 3_000
        columns = np.zeros(11)
        for _ in range(draws):
            train, _ = sample_locations_thomas(cfg, grid, 1, 0, rng)
            columns[round((train[0].x + 10.0) / 2.0)] += 1
        # edge nodes own half a grid cell of the 20 m wide cell
        share = np.array([1.0] + [2.0] * 9 + [1.0]) / 20.0
        assert stats.chisquare(columns, share * draws).pvalue > 1e-3
